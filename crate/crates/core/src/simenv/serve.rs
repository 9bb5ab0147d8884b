//! HTTP front end: SUE routes, `/api/v1/query_range` and an action endpoint
//! on one listener.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use super::{Sim, SimError};
use crate::env::Action;
use crate::metrics::{encode_error, encode_matrix, QUERY_RANGE_PATH};
use crate::time::{TimeWindow, Timestamp};

/// POST one `ACTION ...` line per request line; the reply lists reported
/// `key=value` pairs.
pub const ACTION_PATH: &str = "/-/action";

const WORKERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeClock {
    /// Time moves only through the owner of the [`Sim`].
    Manual,
    /// Simulated time follows the wall clock from the moment of serving;
    /// exposed timestamps are epoch milliseconds.
    Wall,
}

pub struct SimServer {
    addr: SocketAddr,
    server: Arc<Server>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl SimServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_workers();
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    fn stop_workers(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for SimServer {
    fn drop(&mut self) {
        self.stop_workers();
    }
}

pub fn serve_http(sim: Sim, bind: &str, clock: ServeClock) -> Result<SimServer, SimError> {
    let server = Server::http(bind).map_err(|e| SimError::Bind(format!("{bind}: {e}")))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| SimError::Bind(format!("{bind}: not an IP listener")))?;
    let server = Arc::new(server);
    let stop = Arc::new(AtomicBool::new(false));
    if clock == ServeClock::Wall {
        sim.use_wall_clock(Timestamp::now());
    }
    let workers = (0..WORKERS)
        .map(|_| {
            let (server, stop, sim) = (server.clone(), stop.clone(), sim.clone());
            std::thread::spawn(move || loop {
                match server.recv() {
                    Ok(rq) => {
                        if clock == ServeClock::Wall {
                            sim.advance_to(Timestamp::now());
                        }
                        if let Err(e) = handle(&sim, rq) {
                            log::debug!("response failed: {e}");
                        }
                    }
                    Err(_) if stop.load(Ordering::SeqCst) => break,
                    Err(e) => log::debug!("receive failed: {e}"),
                }
            })
        })
        .collect();
    Ok(SimServer {
        addr,
        server,
        stop,
        workers,
    })
}

fn text(status: u16, body: String, content_type: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", content_type).expect("static header");
    Response::from_string(body).with_status_code(status).with_header(header)
}

fn handle(sim: &Sim, mut rq: Request) -> std::io::Result<()> {
    let url = rq.url().to_string();
    let (path, query) = url.split_once('?').unwrap_or((&url, ""));
    let path = path.to_string();
    if path == QUERY_RANGE_PATH {
        let (status, body) = query_range(sim, query);
        return rq.respond(text(status, body, "application/json"));
    }
    if path == ACTION_PATH {
        if rq.method() != &Method::Post {
            return rq.respond(text(405, "POST action lines\n".into(), "text/plain"));
        }
        let mut body = String::new();
        rq.as_reader().read_to_string(&mut body)?;
        let (status, reply) = actions(sim, &body);
        return rq.respond(text(status, reply, "text/plain"));
    }
    let r = sim.handle_request(&path);
    let body = if r.status == 200 { "ok\n" } else { "not found\n" };
    rq.respond(text(r.status, body.into(), "text/plain"))
}

fn query_range(sim: &Sim, query: &str) -> (u16, String) {
    let mut promql = None;
    let mut start = None;
    let mut end = None;
    for (k, v) in url::form_urlencoded::parse(query.as_bytes()) {
        match k.as_ref() {
            "query" => promql = Some(v.into_owned()),
            "start" => start = Some(v.into_owned()),
            "end" => end = Some(v.into_owned()),
            _ => {}
        }
    }
    let bad = |m: String| (400, encode_error("bad_data", &m));
    let Some(promql) = promql else {
        return bad("missing `query`".into());
    };
    let parse = |name: &str, v: Option<String>| {
        let v = v.ok_or_else(|| format!("missing `{name}`"))?;
        Timestamp::parse_decimal_secs(&v).map_err(|e| format!("`{name}`: {e}"))
    };
    let window = match (parse("start", start), parse("end", end)) {
        (Ok(s), Ok(e)) => TimeWindow::new(s, e).map_err(|e| e.to_string()),
        (Err(e), _) | (_, Err(e)) => Err(e),
    };
    let window = match window {
        Ok(w) => w,
        Err(e) => return bad(e),
    };
    match sim.query_range_sim(&promql, &window) {
        Ok(series) => (200, encode_matrix(&series)),
        Err(e) => bad(e.to_string()),
    }
}

fn actions(sim: &Sim, body: &str) -> (u16, String) {
    let mut reply = String::new();
    for line in body.lines().filter(|l| !l.trim().is_empty()) {
        let result = line
            .parse::<Action>()
            .map_err(|e| e.to_string())
            .and_then(|a| sim.apply_action(&a).map_err(|e| e.to_string()));
        match result {
            Ok(out) => reply.push_str(&out.render()),
            Err(e) => return (400, format!("{e}\n")),
        }
    }
    (200, reply)
}
