//! Realtime discussion service: session hub, WebSocket protocol and REST routes.

pub mod hub;
pub mod protocol;
pub mod routes;

use std::future::Future;

pub use hub::{CreatedSession, Hub, HubError};
pub use routes::{router, AppState};

/// Serves until `shutdown` resolves.
pub async fn serve<F>(listener: tokio::net::TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
