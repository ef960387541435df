//! Deterministic simulator and pipeline for gesture-and-language indoor navigation.
//!
//! A robot with a monocular camera watches an instructor point and speak,
//! estimates the pointing ray, drives to a shared viewpoint on that ray,
//! grounds the spoken phrase among visible objects and approaches the one the
//! gesture singles out.

pub mod geometry;
pub mod navigation;
pub mod world;
pub mod pipeline;
pub mod pointing;
pub mod grounding;
pub mod harness;
