//! Two-hand pose estimation from event-camera streams.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`event`] — raw event records, sliding-window slicing and per-pixel
//!   aggregation into compact event clouds.
//! * [`sim`] — an event-camera simulator driven by rendered brightness
//!   frames, plus stream augmentation and cloud labelling.
//! * [`hand`] — a low-poly parametric two-hand model (shape/pose blend
//!   bases, linear blend skinning, joint regression) with procedurally
//!   generated assets.
//! * [`collision`] — BVH-accelerated triangle collision queries and a
//!   cone-field interpenetration penalty.
//! * [`loss`] — the scalar training objectives and their weighting.
//! * [`tape`] — a small reverse-mode automatic differentiation engine
//!   the training path is built on.
//! * [`graph`] — differentiable (taped) versions of the hand model and
//!   the loss stack.
//! * [`net`] — the attention-based two-hand regression network and its
//!   training loop.
//! * [`metrics`] — PCK/AUC pose accuracy metrics and gated collision
//!   percentage.
//! * [`scene`] — keyframed two-hand motion scripts and a toy software
//!   renderer producing brightness frames and ownership masks.
//! * [`reference`] — slow, independent reference implementations used
//!   by the test suites as oracles.
//!
//! The crate is `no_std`-compatible (with `alloc`); the default `std`
//! feature only switches float intrinsics and enables dependencies'
//! std paths.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(missing_docs)]

extern crate alloc;

pub mod collision;
pub mod event;
pub mod graph;
pub mod hand;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod net;
pub mod reference;
pub mod scene;
pub mod sim;
pub mod tape;
