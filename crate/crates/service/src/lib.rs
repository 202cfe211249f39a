//! HTTP service and command line front end over a [`workbench::workspace::Workspace`].

pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;

use std::net::SocketAddr;
use std::path::PathBuf;

use workbench::workspace::Workspace;

pub use api::{router, AppState};
pub use error::ApiError;

/// Serves the API on `bind` until Ctrl-C or SIGTERM.
pub async fn serve(ws: Workspace, bind: SocketAddr, ui_dir: Option<PathBuf>) -> Result<(), ApiError> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| ApiError::internal(format!("cannot bind {bind}: {e}")))?;
    let addr = listener.local_addr().unwrap_or(bind);
    eprintln!("serving workspace {} on http://{addr}", ws.root().display());
    let app = router(AppState::new(ws), ui_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(|e| ApiError::internal(format!("server error: {e}")))?;
    eprintln!("shut down");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
