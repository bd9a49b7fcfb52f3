//! HTTP/1.1 transport for [`Service`]. Every request goes to the same
//! handler; blocking store work runs on tokio's blocking pool.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{header, Method as HttpMethod, StatusCode, Uri};
use axum::response::IntoResponse;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use super::{Request, Response, Service};
use crate::error::{Error, Result};
use crate::store::Store;

/// Service configuration file (TOML). Command-line flags override fields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    /// Placement file; `<data_dir>/placement.toml` when unset.
    #[serde(default)]
    pub placement: Option<PathBuf>,
    #[serde(default = "default_cache_mb")]
    pub cache_mb: usize,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_cache_mb() -> usize {
    256
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: default_listen(),
            data_dir: default_data_dir(),
            placement: None,
            cache_mb: default_cache_mb(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn open_store(&self) -> Result<Store> {
        Ok(Store::open_with(&self.data_dir, self.placement.as_ref())?.with_cache_bytes(self.cache_mb << 20))
    }
}

async fn handle(State(service): State<Service>, method: HttpMethod, uri: Uri, body: Bytes) -> axum::response::Response {
    let req = Request {
        method: method.as_str().to_owned(),
        path: uri.path().to_owned(),
        query: uri.query().unwrap_or("").to_owned(),
        body: body.to_vec(),
    };
    let head = method == HttpMethod::HEAD;
    let resp = match tokio::task::spawn_blocking(move || service.handle(&req)).await {
        Ok(r) => r,
        Err(e) => Response::error(&Error::Storage(format!("handler panicked: {e}"))),
    };
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let body = if head { Vec::new() } else { resp.body };
    (status, [(header::CONTENT_TYPE, resp.content_type)], body).into_response()
}

fn app(service: Service) -> axum::Router {
    axum::Router::new().fallback(handle).layer(DefaultBodyLimit::disable()).with_state(service)
}

/// A server running on a background thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<()>>>,
}

impl ServerHandle {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn stop(mut self) -> Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take().map(JoinHandle::join) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(Error::Storage("server thread panicked".into())),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

/// Bind `listen` (port 0 picks a free one) and serve on a background thread.
pub fn spawn(service: Service, listen: &str) -> Result<ServerHandle> {
    let rt = runtime()?;
    let listener = rt.block_on(tokio::net::TcpListener::bind(listen))?;
    let addr = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            axum::serve(listener, app(service))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })?;
        Ok(())
    });
    Ok(ServerHandle { addr, shutdown: Some(tx), thread: Some(thread) })
}

/// Serve until interrupted.
pub fn serve(store: Arc<Store>, listen: &str) -> Result<()> {
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(listen).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app(Service::new(store)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })?;
    Ok(())
}

/// Minimal blocking HTTP/1.1 client for examples and tests: one request per
/// connection, `Connection: close`.
pub fn request(addr: SocketAddr, req: &Request) -> Result<Response> {
    use std::io::{Read, Write};
    let mut stream = std::net::TcpStream::connect(addr)?;
    let target = if req.query.is_empty() { req.path.clone() } else { format!("{}?{}", req.path, req.query) };
    write!(
        stream,
        "{} {target} HTTP/1.1\r\nHost: {addr}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        req.method,
        req.body.len()
    )?;
    stream.write_all(&req.body)?;
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    let split = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| Error::Storage("malformed HTTP response".into()))?;
    let head = String::from_utf8_lossy(&raw[..split]).into_owned();
    let mut body = raw[split + 4..].to_vec();
    let status: u16 = head
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Storage("malformed status line".into()))?;
    let lower = head.to_ascii_lowercase();
    if lower.contains("transfer-encoding: chunked") {
        body = dechunk(&body)?;
    }
    let content_type = [super::OCPB_TYPE, super::JSON_TYPE, super::PNG_TYPE]
        .into_iter()
        .find(|t| lower.contains(&format!("content-type: {t}")))
        .unwrap_or(super::TEXT_TYPE);
    Ok(Response { status, content_type, body })
}

fn dechunk(mut b: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    loop {
        let eol = b.windows(2).position(|w| w == b"\r\n").ok_or_else(|| Error::Storage("bad chunk".into()))?;
        let len = usize::from_str_radix(std::str::from_utf8(&b[..eol]).unwrap_or("").trim(), 16)
            .map_err(|_| Error::Storage("bad chunk size".into()))?;
        b = &b[eol + 2..];
        if len == 0 {
            return Ok(out);
        }
        out.extend_from_slice(b.get(..len).ok_or_else(|| Error::Storage("short chunk".into()))?);
        b = b.get(len + 2..).unwrap_or(&[]);
    }
}
