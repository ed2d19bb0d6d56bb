#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use dfo_attack::models::remote::{ErrorResponse, LogitsRequest, LogitsResponse, MetaResponse};
use dfo_attack::models::ModelOracle;
use dfo_attack::ImageTensor;
use tiny_http::{Header, Method, Response, Server};

/// Loopback logits server backed by an in-process model.
pub struct TestServer {
    pub endpoint: String,
    pub logits_calls: Arc<AtomicU64>,
    server: Arc<Server>,
}

impl TestServer {
    pub fn calls(&self) -> u64 {
        self.logits_calls.load(Ordering::SeqCst)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.server.unblock();
    }
}

fn json(status: u16, body: Vec<u8>) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_data(body)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap())
}

fn error(status: u16, message: String) -> Response<std::io::Cursor<Vec<u8>>> {
    json(status, serde_json::to_vec(&ErrorResponse { error: message }).unwrap())
}

pub fn serve<M: ModelOracle + 'static>(model: M, delay: Option<Duration>) -> TestServer {
    let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
    let endpoint = format!("http:{}", server.server_addr().to_ip().unwrap());
    let calls = Arc::new(AtomicU64::new(0));
    let (srv, counter) = (server.clone(), calls.clone());
    thread::spawn(move || {
        let shape = model.input_shape();
        for mut request in srv.incoming_requests() {
            let response = match (request.method(), request.url()) {
                (Method::Get, "/meta") => {
                    let meta = MetaResponse { shape: [shape.channels, shape.height, shape.width], classes: model.classes() };
                    json(200, serde_json::to_vec(&meta).unwrap())
                }
                (Method::Post, "/logits") => {
                    counter.fetch_add(1, Ordering::SeqCst);
                    if let Some(d) = delay {
                        thread::sleep(d);
                    }
                    let mut body = Vec::new();
                    request.as_reader().read_to_end(&mut body).unwrap();
                    match serde_json::from_slice::<LogitsRequest>(&body) {
                        Err(e) => error(400, e.to_string()),
                        Ok(req) if req.image.len() != shape.len() => {
                            error(400, format!("image must have {} values, got {}", shape.len(), req.image.len()))
                        }
                        Ok(req) => match ImageTensor::new(shape, req.image).and_then(|x| model.logits(&x)) {
                            Ok(l) => json(200, serde_json::to_vec(&LogitsResponse { logits: l.into_values() }).unwrap()),
                            Err(e) => error(400, e.to_string()),
                        },
                    }
                }
                _ => error(404, "not found".into()),
            };
            let _ = request.respond(response);
        }
    });
    TestServer { endpoint, logits_calls: calls, server }
}
