//! Prime-sample attention for detection training.
//!
//! Ranks the samples of a mini-batch by how much they matter to mAP
//! (hierarchical local rank), turns those ranks into loss weights, and couples
//! classification to regression quality through a classification-aware
//! regression loss. A COCO-style evaluator and a small synthetic training
//! harness are included so the pieces can be compared end to end.
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod assignment;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod harness;
pub mod hlr;
pub mod isr;
pub mod losses;

pub use error::{Error, Result};
