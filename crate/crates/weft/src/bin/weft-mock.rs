//! Mock downstream MCP servers over stdio, for tests and demos.

use std::sync::Arc;

use clap::{Parser, ValueEnum};
use weft::mock::{FixtureShape, GraphServer, ResourceServer};
use weft::rpc::{serve_stdio, McpService};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Resource,
    Graph,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Shape {
    Small,
    Full,
}

#[derive(Parser)]
#[command(
    name = "weft-mock",
    version,
    about = "Deterministic mock MCP servers (resource inventory, property graph) on stdio"
)]
struct Args {
    /// Which server to run.
    #[arg(long, value_enum)]
    kind: Kind,

    /// Fixture seed; the same seed yields byte-identical responses.
    #[arg(long, env = "WEFT_MOCK_SEED", default_value_t = 0)]
    seed: u64,

    /// Fixture scale for the resource server.
    #[arg(long, value_enum, default_value_t = Shape::Small)]
    shape: Shape,
}

#[tokio::main]
async fn main() -> std::io::Result<()> {
    env_logger::init();
    let args = Args::parse();
    let service: Arc<dyn McpService> = match args.kind {
        Kind::Resource => {
            let shape = match args.shape {
                Shape::Small => FixtureShape::small(args.seed),
                Shape::Full => FixtureShape::full(args.seed),
            };
            Arc::new(ResourceServer::new(shape))
        }
        Kind::Graph => Arc::new(GraphServer::new()),
    };
    serve_stdio(service).await
}
