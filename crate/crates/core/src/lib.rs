//! Registration and fusion of sparse TRUS prostate contours onto dense MRI
//! contours: distance maps, rigid and octree-spline elastic registration,
//! MRI reslicing with quadrant composites, validation metrics, slice-stack
//! volumetry, simplified seed dosimetry, synthetic phantoms and file
//! formats.

pub mod distance_map;
pub mod elastic;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod io;
pub mod lm;
pub mod metrics;
pub mod octree;
pub mod phantom;
pub mod pipeline;
pub mod resample;
pub mod rigid;
pub mod transform;
pub mod volumetry;

pub use distance_map::{brute_force_distance, build_distance_map, DistanceMap, DistanceSample};
pub use elastic::{register_elastic, ElasticConfig, ElasticOutcome};
pub use error::{Error, ErrorClass, Result};
pub use exec::Exec;
pub use geometry::{
    cloud_from_stack, ContourStack, Image2D, Modality, PlanarContour, Point2, Point3, PointCloud, RigidTransform,
    Vec3, VolumeGrid,
};
pub use metrics::{LandmarkEntry, LandmarkSeries};
pub use octree::OctreeSplineFFD;
pub use phantom::{apply_known_deformation, generate_phantom, DeformationSpec, PhantomScene, PhantomSpec};
pub use resample::{compose_quadrants, project_mri_contours, reslice, CrossPosition, Interp, PlaneSpec};
pub use rigid::{register_rigid, register_rigid_from, RegistrationConfig, ResidualStats, RigidOutcome};
pub use transform::{apply_transform, FusionTransform};
pub use volumetry::{compute_dvh, d90, stack_volume, DvhCurve, Seed, SeedImplant};
