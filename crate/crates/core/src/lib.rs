//! Geometry kernels for egocentric avatar rendering: camera models, a
//! procedural skinned body, IUV rasterization, texture stacks with
//! differentiable sampling, target-pose construction and image metrics.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod body;
pub mod container;
pub mod geometry;
pub mod img;
pub mod metrics;
pub mod posecon;
pub mod raster;
pub mod scalar;
pub mod textures;

pub use scalar::Real;

pub type Vec3d = geometry::Vec3<f64>;
pub type Vec3f = geometry::Vec3<f32>;
pub type RigidTransformd = geometry::RigidTransform<f64>;
pub type FisheyeCamerad = geometry::FisheyeCamera<f64>;
pub type PinholeCamerad = geometry::PinholeCamera<f64>;
pub type Camerad = geometry::Camera<f64>;
pub type Camera32 = geometry::Camera<f32>;
pub type BodyMeshd = body::BodyMesh<f64>;
pub type BodyPosed = body::BodyPose<f64>;
pub type Skeletond = body::Skeleton<f64>;
pub type Imagef = img::Image<f32>;
pub type Imaged = img::Image<f64>;
pub type IuvImagef = raster::IuvImage<f32>;
pub type IuvImaged = raster::IuvImage<f64>;
pub type TextureStackf = textures::TextureStack<f32>;
pub type TextureStackd = textures::TextureStack<f64>;
pub type JointTargetsd = body::JointTargets<f64>;
