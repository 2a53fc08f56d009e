//! Single-file weight checkpoints: JSON header plus one `f32` block per
//! parameter array (value and Adam moments).

use std::path::Path;

use egorender_core::container::{BlockData, Container};
use serde::{Deserialize, Serialize};

use crate::blocks::Module;
use crate::param::Param;
use crate::NnError;

pub const CHECKPOINT_KIND: &str = "egorender-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub version: u32,
    /// Architecture configs and anything else needed to rebuild the nets.
    pub arch: serde_json::Value,
    pub step: u64,
}

pub struct Checkpoint {
    inner: Container<CheckpointHeader>,
}

impl Checkpoint {
    pub fn new(arch: serde_json::Value, step: u64) -> Self {
        let header = CheckpointHeader { kind: CHECKPOINT_KIND.into(), version: CHECKPOINT_VERSION, arch, step };
        Self { inner: Container::new(header) }
    }

    pub fn header(&self) -> &CheckpointHeader {
        &self.inner.meta
    }

    pub fn put(&mut self, name: &str, values: &[f32]) {
        self.inner.push(name, BlockData::F32(values.to_vec()));
    }

    pub fn get(&self, name: &str) -> Result<&[f32], NnError> {
        Ok(self.inner.f32(name)?)
    }

    pub fn has(&self, name: &str) -> bool {
        self.inner.has(name)
    }

    pub fn put_param(&mut self, name: &str, p: &Param) {
        self.put(&format!("{name}/value"), &p.value);
        self.put(&format!("{name}/m"), &p.m);
        self.put(&format!("{name}/v"), &p.v);
    }

    pub fn load_param(&self, name: &str, p: &mut Param) -> Result<(), NnError> {
        for (suffix, dst) in [("value", &mut p.value), ("m", &mut p.m), ("v", &mut p.v)] {
            let src = self.get(&format!("{name}/{suffix}"))?;
            if src.len() != dst.len() {
                return Err(NnError::Checkpoint(format!("{name}: {} values stored, {} expected", src.len(), dst.len())));
            }
            dst.copy_from_slice(src);
        }
        p.zero_grad();
        Ok(())
    }

    pub fn put_module(&mut self, prefix: &str, m: &mut dyn Module) {
        m.visit_params(&mut |name, p| self.put_param(&format!("{prefix}.{name}"), p));
    }

    pub fn load_module(&self, prefix: &str, m: &mut dyn Module) -> Result<(), NnError> {
        let mut res = Ok(());
        m.visit_params(&mut |name, p| {
            if res.is_ok() {
                res = self.load_param(&format!("{prefix}.{name}"), p);
            }
        });
        res
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        Ok(self.inner.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let inner = Container::<CheckpointHeader>::load(path)?;
        if inner.meta.kind != CHECKPOINT_KIND {
            return Err(NnError::Checkpoint(format!("unexpected kind `{}`", inner.meta.kind)));
        }
        if inner.meta.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported checkpoint version {}", inner.meta.version)));
        }
        Ok(Self { inner })
    }
}
