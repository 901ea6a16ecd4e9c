//! Drive the JSON API in process, then over a real socket.
//!
//!     cargo run --example http_service

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Arc;

use gms::material::{preset_user, MaterialParams};
use gms::service::{start, Api};
use gms::session::SessionConfig;
use serde_json::{json, Value};

fn main() -> gms::error::Result<()> {
    let api = Arc::new(Api::new(SessionConfig { seed: 5, ..Default::default() }, None));

    let id = api.handle("POST", "/sessions", b"{}").body["id"].as_str().unwrap().to_string();
    let gallery = api.handle("GET", &format!("/sessions/{id}/gallery?count=120"), b"").body;
    let user = preset_user("glassy", 19)?;
    let mut samples = Vec::new();
    for p in gallery["items"].as_array().unwrap() {
        let x: MaterialParams = serde_json::from_value(p.clone())?;
        samples.push(json!({"params": p, "score": user.score(&x)?}));
    }
    let body = json!({ "samples": samples }).to_string();
    api.handle("POST", &format!("/sessions/{id}/scores"), body.as_bytes());

    let early = api.handle("GET", &format!("/sessions/{id}/recommendations?threshold=4"), b"");
    println!("before fitting: {} {}", early.status, early.body);
    let fit = api.handle("POST", &format!("/sessions/{id}/fit"), b"");
    println!("fit: {}", fit.body["log_likelihood"]);
    let recs = api.handle("GET", &format!("/sessions/{id}/recommendations?threshold=4&count=5"), b"");
    println!("{} recommendations, acceptance {}", recs.body["items"].as_array().unwrap().len(), recs.body["acceptance_rate"]);

    let server = start(api, "127.0.0.1:0", 2)?;
    let mut stream = TcpStream::connect(server.addr())?;
    write!(stream, "GET /sessions/{id} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")?;
    let mut response = String::new();
    stream.read_to_string(&mut response)?;
    let summary: Value = serde_json::from_str(response.split("\r\n\r\n").nth(1).unwrap_or("null"))?;
    println!("over HTTP at {}: {}", server.addr(), summary);
    server.shutdown();
    Ok(())
}
