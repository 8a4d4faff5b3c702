//! Joint point-cloud filtering and normal estimation.
//!
//! Local patches around every point are canonicalized by their covariance
//! eigenbasis and embedded by a PointNet-style encoder that is pretrained
//! contrastively on pairs of differently-noised views of the same patch.
//! A regressor on top of the frozen encoder predicts a displacement and a
//! normal per point, and inference alternates network passes with a
//! Taubin-style inflation and a normal-guided position update.
//!
//! Module map:
//!
//! * [`geom`]: point clouds, the k-d tree, patches and canonical frames.
//! * [`datagen`]: noise models, variant sets, contrastive pairs, training
//!   samples, sharp-feature masks and density resampling.
//! * [`tensor`]: a small define-by-run reverse-mode autodiff engine with
//!   Adam and SGD.
//! * [`net`]: encoder, projection head and regressor.
//! * [`loss`]: NT-Xent and the joint position/normal losses.
//! * [`pipeline`]: pretraining, regressor training and filtering.
//! * [`eval`]: MSAE, Chamfer, point-to-surface and a PCA baseline.
//! * [`io`] and [`cli`]: file formats and the `pointfuse` command.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod loss;
pub mod net;
pub mod pipeline;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use geom::{PointCloud, Vec3};
