//! A small HTTP server exposing one open annotation session as a JSON API.
//!
//! Edits made through the API stay pending in the session until
//! `POST /api/commit`. When the server stops, uncommitted edits are rolled
//! back to the last committed state.

mod api;

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use annodb::{AnnotationDb, Snapshot};

pub use api::{image_id, imagefile_from_id, router};

/// Binding and asset options for [`serve`].
#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub host: IpAddr,
    pub port: u16,
    /// Built inspector assets, served at `/` when given.
    pub static_dir: Option<PathBuf>,
    /// Root that imagefile and maskfile paths are relative to.
    pub rootdir: PathBuf,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8000,
            static_dir: None,
            rootdir: PathBuf::from("."),
        }
    }
}

/// Shared server state. The session sits behind a mutex, so requests touch
/// the database one at a time.
pub struct AppState {
    db: Mutex<AnnotationDb>,
    committed: Mutex<Snapshot>,
    rootdir: PathBuf,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    pub fn new(db: AnnotationDb, rootdir: impl Into<PathBuf>) -> annodb::Result<Arc<Self>> {
        let committed = db.snapshot()?;
        Ok(Arc::new(Self {
            db: Mutex::new(db),
            committed: Mutex::new(committed),
            rootdir: rootdir.into(),
        }))
    }

    pub fn db(&self) -> MutexGuard<'_, AnnotationDb> {
        lock(&self.db)
    }

    pub fn rootdir(&self) -> &Path {
        &self.rootdir
    }

    pub(crate) fn mark_committed(&self, db: &AnnotationDb) -> annodb::Result<()> {
        *lock(&self.committed) = db.snapshot()?;
        Ok(())
    }

    /// Hands the session back with uncommitted API edits rolled back.
    pub fn into_session(self: Arc<Self>) -> annodb::Result<AnnotationDb> {
        let state = Arc::try_unwrap(self)
            .map_err(|_| annodb::Error::InvalidArgument("server state is still in use".into()))?;
        let mut db = state.db.into_inner().unwrap_or_else(|e| e.into_inner());
        let committed = state.committed.into_inner().unwrap_or_else(|e| e.into_inner());
        if db.is_dirty() {
            log::info!("discarding uncommitted edits");
        }
        db.restore(&committed)?;
        Ok(db)
    }
}

#[derive(Debug)]
pub enum ServeError {
    Bind { addr: SocketAddr, source: std::io::Error },
    Io(std::io::Error),
    Db(annodb::Error),
}

impl std::fmt::Display for ServeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServeError::Bind { addr, source } => write!(f, "cannot listen on {addr}: {source}"),
            ServeError::Io(e) => write!(f, "server error: {e}"),
            ServeError::Db(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ServeError {}

impl From<annodb::Error> for ServeError {
    fn from(e: annodb::Error) -> Self {
        ServeError::Db(e)
    }
}

/// Serves the session until Ctrl-C, then returns it with any uncommitted
/// API edits rolled back.
pub fn serve(db: AnnotationDb, opts: &ServeOptions) -> Result<AnnotationDb, ServeError> {
    let runtime = tokio::runtime::Runtime::new().map_err(ServeError::Io)?;
    let state = AppState::new(db, &opts.rootdir)?;
    let app = router(state.clone(), opts.static_dir.as_deref());
    let addr = SocketAddr::new(opts.host, opts.port);
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| ServeError::Bind { addr, source })?;
        log::warn!("serving on http://{}", listener.local_addr().map_err(ServeError::Io)?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(ServeError::Io)
    })?;
    drop(runtime);
    Ok(state.into_session()?)
}
