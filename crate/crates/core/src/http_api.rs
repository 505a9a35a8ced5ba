//! HTTP front for browsers and remote clients.
//!
//! - `POST /mcp`: one JSON-RPC envelope per request, answered from a single
//!   shared MCP session.
//! - `GET /events`: server-sent events, one JSON event per message. Resume
//!   with a `Last-Event-ID` header or `?since=<id>`.
//! - `GET /transcript`: the prompt session's turns as a JSON array.
//! - `POST /prompt`: runs one request through the prompt session. Body is
//!   `{"prompt": "..."}` or plain text. Requests run one at a time.
//! - `GET /files/<case-relative path>`: raw bytes of a case file.

use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::RecvTimeoutError;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server, StatusCode};

use crate::case::normalize_relative;
use crate::client::PostSession;
use crate::events::{Event, EventBus};
use crate::mcp::McpSession;

const WORKERS: usize = 4;
const POLL: Duration = Duration::from_millis(200);
const HEARTBEAT: Duration = Duration::from_secs(15);

/// Runs plain-language requests for `POST /prompt`.
pub trait PromptHandler: Send + Sync {
    /// Runs one request; `Err` carries a message for the caller.
    fn submit(&self, prompt: &str) -> Result<Value, String>;
    /// Every turn so far, oldest first.
    fn entries(&self) -> Vec<Value>;
}

/// A post-processing session behind a lock.
pub struct SessionPrompts(pub Mutex<PostSession>);

impl PromptHandler for SessionPrompts {
    fn submit(&self, prompt: &str) -> Result<Value, String> {
        let mut s = self.0.lock().unwrap_or_else(|p| p.into_inner());
        s.turn(prompt)
            .map(|e| serde_json::to_value(e).expect("entry serializes"))
            .map_err(|e| e.to_string())
    }

    fn entries(&self) -> Vec<Value> {
        let s = self.0.lock().unwrap_or_else(|p| p.into_inner());
        s.turns()
            .iter()
            .map(|e| serde_json::to_value(e).expect("entry serializes"))
            .collect()
    }
}

pub struct ApiState {
    pub mcp: Mutex<McpSession>,
    pub events: EventBus,
    pub case_root: PathBuf,
    pub prompts: Option<Arc<dyn PromptHandler>>,
    prompt_queue: Mutex<()>,
}

impl ApiState {
    pub fn new(mcp: McpSession, events: EventBus, case_root: impl Into<PathBuf>) -> Self {
        Self {
            mcp: Mutex::new(mcp),
            events,
            case_root: case_root.into(),
            prompts: None,
            prompt_queue: Mutex::new(()),
        }
    }

    pub fn with_prompts(mut self, handler: Arc<dyn PromptHandler>) -> Self {
        self.prompts = Some(handler);
        self
    }
}

pub struct HttpServer {
    server: Arc<Server>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl HttpServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(addr: &str, state: Arc<ApiState>) -> io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(|e| io::Error::new(io::ErrorKind::AddrNotAvailable, e))?);
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::new(io::ErrorKind::Other, "not an IP listener"))?;
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..WORKERS)
            .map(|_| {
                let server = server.clone();
                let state = state.clone();
                let stop = stop.clone();
                std::thread::spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        match server.recv_timeout(POLL) {
                            Ok(Some(req)) => route(req, &state, &stop),
                            Ok(None) => {}
                            Err(e) => {
                                log::warn!("http accept: {e}");
                                break;
                            }
                        }
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            stop,
            workers,
            addr: bound,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting, closes event streams and joins the workers.
    pub fn shutdown(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.halt();
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("valid header")
}

fn json_response(status: u16, body: &Value) -> Response<io::Cursor<Vec<u8>>> {
    Response::from_data(body.to_string().into_bytes())
        .with_status_code(StatusCode(status))
        .with_header(header("Content-Type", "application/json"))
        .with_header(header("Access-Control-Allow-Origin", "*"))
}

fn error_response(status: u16, message: &str) -> Response<io::Cursor<Vec<u8>>> {
    json_response(status, &json!({"error": message}))
}

fn read_body(req: &mut Request) -> io::Result<String> {
    let mut body = String::new();
    req.as_reader().read_to_string(&mut body)?;
    Ok(body)
}

fn query_param<'a>(url: &'a str, key: &str) -> Option<&'a str> {
    let (_, q) = url.split_once('?')?;
    q.split('&').find_map(|kv| {
        let (k, v) = kv.split_once('=')?;
        (k == key).then_some(v)
    })
}

fn percent_decode(s: &str) -> Option<String> {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = std::str::from_utf8(bytes.get(i + 1..i + 3)?).ok()?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn content_type(path: &str) -> &'static str {
    match path.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).as_deref() {
        Some("png") => "image/png",
        Some("svg") => "image/svg+xml",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("json") => "application/json",
        Some("vtk") => "application/octet-stream",
        _ => "text/plain; charset=utf-8",
    }
}

fn route(mut req: Request, state: &ApiState, stop: &AtomicBool) {
    let url = req.url().to_string();
    let path = url.split('?').next().unwrap_or("").to_string();
    let method = req.method().clone();
    let result = match (&method, path.as_str()) {
        (Method::Post, "/mcp") => {
            let resp = match read_body(&mut req) {
                Ok(body) => {
                    let mut session = state.mcp.lock().unwrap_or_else(|p| p.into_inner());
                    match session.handle_line(&body) {
                        Some(reply) => Response::from_data(reply.into_bytes())
                            .with_header(header("Content-Type", "application/json"))
                            .with_header(header("Access-Control-Allow-Origin", "*")),
                        None => Response::from_data(Vec::new()).with_status_code(StatusCode(202)),
                    }
                }
                Err(e) => error_response(400, &e.to_string()),
            };
            req.respond(resp)
        }
        (Method::Get, "/events") => {
            let after = req
                .headers()
                .iter()
                .find(|h| h.field.equiv("Last-Event-ID"))
                .and_then(|h| h.value.as_str().trim().parse().ok())
                .or_else(|| query_param(&url, "since").and_then(|v| v.parse().ok()))
                .unwrap_or(0);
            stream_events(req, &state.events, after, stop)
        }
        (Method::Get, "/transcript") => {
            let entries = state.prompts.as_ref().map(|p| p.entries()).unwrap_or_default();
            req.respond(json_response(200, &Value::Array(entries)))
        }
        (Method::Post, "/prompt") => {
            let resp = match (&state.prompts, read_body(&mut req)) {
                (None, _) => error_response(404, "no prompt session is attached to this server"),
                (_, Err(e)) => error_response(400, &e.to_string()),
                (Some(handler), Ok(body)) => {
                    let prompt = match serde_json::from_str::<Value>(&body) {
                        Ok(v) => v["prompt"].as_str().unwrap_or_default().to_string(),
                        Err(_) => body,
                    };
                    if prompt.trim().is_empty() {
                        error_response(400, "empty prompt")
                    } else {
                        let _queue = state.prompt_queue.lock().unwrap_or_else(|p| p.into_inner());
                        match handler.submit(prompt.trim()) {
                            Ok(entry) => json_response(200, &entry),
                            Err(message) => error_response(422, &message),
                        }
                    }
                }
            };
            req.respond(resp)
        }
        (Method::Get, p) if p.starts_with("/files/") => {
            let resp = match percent_decode(&p["/files/".len()..]).map(|r| normalize_relative(&r)) {
                Some(Ok(rel)) => match std::fs::read(state.case_root.join(&rel)) {
                    Ok(bytes) => Response::from_data(bytes)
                        .with_header(header("Content-Type", content_type(&rel)))
                        .with_header(header("Access-Control-Allow-Origin", "*")),
                    Err(_) => error_response(404, &format!("no file {rel}")),
                },
                Some(Err(e)) => error_response(400, &e.to_string()),
                None => error_response(400, "bad percent-encoding"),
            };
            req.respond(resp)
        }
        (Method::Options, _) => req.respond(
            Response::from_data(Vec::new())
                .with_status_code(StatusCode(204))
                .with_header(header("Access-Control-Allow-Origin", "*"))
                .with_header(header("Access-Control-Allow-Methods", "GET, POST, OPTIONS"))
                .with_header(header("Access-Control-Allow-Headers", "Content-Type, Last-Event-ID")),
        ),
        _ => req.respond(error_response(404, &format!("no route for {method} {path}"))),
    };
    if let Err(e) = result {
        log::debug!("http {method} {path}: {e}");
    }
}

/// One SSE message. `data` is the whole event as JSON on one line.
pub fn sse_message(e: &Event) -> String {
    let data = serde_json::to_string(e).expect("event serializes");
    format!("id: {}\nevent: {}\ndata: {data}\n\n", e.id, e.kind)
}

fn stream_events(req: Request, bus: &EventBus, after: u64, stop: &AtomicBool) -> io::Result<()> {
    let (backlog, rx) = bus.subscribe(after);
    let mut w = req.into_writer();
    w.write_all(
        b"HTTP/1.1 200 OK\r\nContent-Type: text/event-stream\r\nCache-Control: no-cache\r\n\
          Access-Control-Allow-Origin: *\r\nConnection: close\r\n\r\n",
    )?;
    for e in &backlog {
        w.write_all(sse_message(e).as_bytes())?;
    }
    w.flush()?;
    let mut quiet = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        match rx.recv_timeout(POLL) {
            Ok(e) => {
                w.write_all(sse_message(&e).as_bytes())?;
                w.flush()?;
                quiet = Instant::now();
            }
            Err(RecvTimeoutError::Timeout) => {
                if quiet.elapsed() >= HEARTBEAT {
                    w.write_all(b": keep-alive\n\n")?;
                    w.flush()?;
                    quiet = Instant::now();
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::copy_case;
    use crate::mcp::{HttpTransport, McpClient, ToolHost};
    use crate::tools::{Registry, SimulatedPost};
    use std::io::{BufRead, BufReader};
    use std::net::TcpStream;
    use std::path::Path;

    struct Echo(Mutex<Vec<Value>>);

    impl PromptHandler for Echo {
        fn submit(&self, prompt: &str) -> Result<Value, String> {
            if prompt == "fail" {
                return Err("no tool selected".into());
            }
            std::thread::sleep(Duration::from_millis(50));
            let mut v = self.0.lock().unwrap();
            let entry = json!({"request": prompt, "n": v.len()});
            v.push(entry.clone());
            Ok(entry)
        }
        fn entries(&self) -> Vec<Value> {
            self.0.lock().unwrap().clone()
        }
    }

    fn start() -> (tempfile::TempDir, HttpServer, EventBus) {
        let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/cases/naca0012");
        let tmp = tempfile::tempdir().unwrap();
        copy_case(&src, tmp.path()).unwrap();
        let events = EventBus::new();
        let host = ToolHost::new(Registry::builtin(), tmp.path(), Arc::new(SimulatedPost::new())).with_events(events.clone());
        let state = ApiState::new(McpSession::new(Arc::new(host)), events.clone(), tmp.path())
            .with_prompts(Arc::new(Echo(Mutex::new(vec![]))));
        let server = HttpServer::start("127.0.0.1:0", Arc::new(state)).unwrap();
        (tmp, server, events)
    }

    fn read_events(url: &str, extra_header: &str, n: usize) -> Vec<Value> {
        let addr = url.trim_start_matches("http://").split('/').next().unwrap().to_string();
        let path = &url[url.find(&addr).unwrap() + addr.len()..];
        let mut s = TcpStream::connect(&addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\n{extra_header}\r\n").unwrap();
        let mut r = BufReader::new(s);
        let mut out = Vec::new();
        let mut line = String::new();
        while out.len() < n {
            line.clear();
            if r.read_line(&mut line).unwrap() == 0 {
                break;
            }
            if let Some(d) = line.strip_prefix("data: ") {
                out.push(serde_json::from_str(d.trim()).unwrap());
            }
        }
        out
    }

    #[test]
    fn mcp_over_http_and_events() {
        let (_t, server, events) = start();
        let mut client = McpClient::new(HttpTransport::new(&format!("{}/mcp", server.url())));
        client.initialize().unwrap();
        assert!(client.list_tools().unwrap().len() >= 20);
        client
            .call_tool("postProcess_vorticity", &json!({"time": "latest"}))
            .unwrap();
        let n = events.history().len();
        assert!(n >= 2);
        let all = read_events(&format!("{}/events", server.url()), "", n);
        assert_eq!(all.len(), n);
        assert_eq!(all[0]["kind"], "tool-invocation");
        // Resuming after the first event repeats nothing.
        let rest = read_events(&format!("{}/events", server.url()), "Last-Event-ID: 1\r\n", n - 1);
        assert_eq!(rest[0]["id"], 2);
        let since = read_events(&format!("{}/events?since={}", server.url(), n - 1), "", 1);
        assert_eq!(since[0]["id"], n as u64);
        server.shutdown();
    }

    #[test]
    fn live_events_arrive_after_backlog() {
        let (_t, server, events) = start();
        let url = format!("{}/events", server.url());
        let reader = std::thread::spawn(move || read_events(&url, "", 2));
        std::thread::sleep(Duration::from_millis(200));
        events.publish(crate::events::WORKFLOW_STATE, json!({"stage": "Running"}));
        events.publish(crate::events::WORKFLOW_STATE, json!({"stage": "Converged"}));
        let got = reader.join().unwrap();
        assert_eq!(got[1]["payload"]["stage"], "Converged");
    }

    #[test]
    fn prompts_transcript_and_files() {
        let (tmp, server, _) = start();
        let base = server.url();
        let err = ureq::post(&format!("{base}/prompt")).send_json(json!({"prompt": "  "})).unwrap_err();
        assert!(matches!(err, ureq::Error::Status(400, _)));
        let err = ureq::post(&format!("{base}/prompt")).send_string("fail").unwrap_err();
        assert!(matches!(err, ureq::Error::Status(422, _)));
        let handles: Vec<_> = (0..3)
            .map(|i| {
                let url = format!("{base}/prompt");
                std::thread::spawn(move || ureq::post(&url).send_json(json!({"prompt": format!("q{i}")})).unwrap().into_json::<Value>().unwrap())
            })
            .collect();
        let mut ns: Vec<u64> = handles.into_iter().map(|h| h.join().unwrap()["n"].as_u64().unwrap()).collect();
        ns.sort();
        assert_eq!(ns, [0, 1, 2]);
        let t: Value = ureq::get(&format!("{base}/transcript")).call().unwrap().into_json().unwrap();
        assert_eq!(t.as_array().unwrap().len(), 3);

        std::fs::create_dir_all(tmp.path().join("postProcessing/s/500")).unwrap();
        std::fs::write(tmp.path().join("postProcessing/s/500/p walls.raw"), "# x y z p\n0 0 0 1\n").unwrap();
        let body = ureq::get(&format!("{base}/files/postProcessing/s/500/p%20walls.raw"))
            .call()
            .unwrap()
            .into_string()
            .unwrap();
        assert_eq!(body, "# x y z p\n0 0 0 1\n");
        assert!(matches!(
            ureq::get(&format!("{base}/files/..%2F..%2Fetc%2Fpasswd")).call(),
            Err(ureq::Error::Status(400, _))
        ));
        assert!(matches!(
            ureq::get(&format!("{base}/files/nothing/here")).call(),
            Err(ureq::Error::Status(404, _))
        ));
    }
}
