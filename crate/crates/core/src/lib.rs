//! Facilitation engine: sessions, hat agents, scheduling, storage and metrics.

pub mod analytics;
pub mod clock;
pub mod config;
pub mod facilitation;
pub mod llm;
pub mod model;
pub mod scheduler;
pub mod simulate;
pub mod store;

pub use clock::{Clock, SystemClock, VirtualClock};
pub use model::{Author, FacilitationModel, Hat, ParticipantId, Phase, Post, Session, SessionHeader, TopicId};
