//! Teacher-student semi-supervised training of toy detectors on simulated
//! frames.

pub mod detector;
pub mod loss;
pub mod ssl;

pub use detector::{apply_2d, apply_3d, toy_forward_2d, toy_forward_3d, Modality, ToyDetection2D, ToyDetection3D, ToyDetector};
pub use loss::{background_focal, smooth_l1, supervised_loss_2d, supervised_loss_2d_ignoring, supervised_loss_3d, supervised_loss_3d_ignoring, Label2D, Label3D, SupervisedLoss, SupervisionConfig};
pub use ssl::*;
