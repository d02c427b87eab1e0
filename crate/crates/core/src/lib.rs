//! Core of tether, a local focus-support assistant for developers.
//!
//! The pipeline runs activity events through focus detection, turns
//! triggers into grounded prompts, generates replies through a pluggable
//! provider and delivers them under a low-disruption policy, while a small
//! game layer rewards sustained focus. Everything persists to one local file.

pub mod activity;
pub mod config;
pub mod focus;
pub mod gamification;
pub mod llm;
pub mod notifier;
pub mod prompt;
pub mod rag;
pub mod service;
pub mod store;
