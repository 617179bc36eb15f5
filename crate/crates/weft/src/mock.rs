//! Deterministic mock downstream servers and the sync blueprint generator.
//!
//! Two servers reproduce the cluster-to-graph sync scenario without real
//! infrastructure: a resource server exposing a seeded inventory
//! ([`resource`]) and a property-graph server with idempotent MERGE
//! semantics ([`graph`]). [`sync`] generates the three-phase sync blueprint
//! over any shape, and [`fixture`] is the shared inventory both the servers
//! and the test oracles read.
//!
//! Everything is pure function of the seed: the same seed yields
//! byte-identical tool responses, which is what makes exact-equality
//! assertions against brute-force counts possible.

pub mod fixture;
pub mod graph;
pub mod resource;
pub mod sync;

pub use fixture::{Fixture, FixtureShape};
pub use graph::GraphServer;
pub use resource::ResourceServer;
pub use sync::{make_sync_blueprint, SyncShape};
