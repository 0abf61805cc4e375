//! Newline-delimited JSON-RPC framing, the tool server, and `dispatch`.

use std::collections::VecDeque;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::envelope::{parse_envelope, serialize_envelope, Args, Envelope, EnvelopeError, EnvelopeMeta};
use super::{RouterError, ToolRegistry};

const METHOD_NOT_FOUND: i64 = -32601;
const INVALID_REQUEST: i64 = -32600;
const PARSE_ERROR: i64 = -32700;

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("transport closed")]
    Closed,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<io::Error> for TransportError {
    fn from(e: io::Error) -> Self {
        TransportError::Io(e.to_string())
    }
}

/// Moves whole frames. A frame never contains a newline.
pub trait Transport {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError>;
    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError>;
}

/// Frames as `\n`-terminated lines over any reader/writer pair.
pub struct LineTransport<R, W> {
    reader: R,
    writer: W,
}

impl<R: BufRead, W: Write> LineTransport<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer }
    }
}

impl LineTransport<BufReader<TcpStream>, TcpStream> {
    pub fn connect_tcp(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self::new(BufReader::new(stream.try_clone()?), stream))
    }
}

impl<R: BufRead, W: Write> Transport for LineTransport<R, W> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        self.writer.write_all(frame)?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        let mut line = Vec::new();
        if self.reader.read_until(b'\n', &mut line)? == 0 {
            return Err(TransportError::Closed);
        }
        if line.last() == Some(&b'\n') {
            line.pop();
        }
        Ok(line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub status: ToolStatus,
    pub payload: Value,
}

impl ToolResult {
    pub fn ok(payload: Value) -> Self {
        Self { status: ToolStatus::Ok, payload }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self { status: ToolStatus::Error, payload: Value::String(message.into()) }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ToolStatus::Ok
    }
}

/// Executes registered tools on the server side.
pub trait ToolHandler {
    fn call(&mut self, tool: &str, args: &Args, meta: &EnvelopeMeta) -> ToolResult;
}

/// Answers `tool/*` calls and `registry/list`.
pub struct ToolServer<H> {
    registry: ToolRegistry,
    handler: H,
}

fn error_frame(id: Value, code: i64, message: String) -> Vec<u8> {
    let v = json!({"error": {"code": code, "message": message}, "id": id, "jsonrpc": "2.0"});
    serde_json::to_vec(&v).expect("a JSON value always serializes")
}

fn result_frame(id: Value, result: Value) -> Vec<u8> {
    let v = json!({"id": id, "jsonrpc": "2.0", "result": result});
    serde_json::to_vec(&v).expect("a JSON value always serializes")
}

impl<H: ToolHandler> ToolServer<H> {
    pub fn new(registry: ToolRegistry, handler: H) -> Self {
        Self { registry, handler }
    }

    pub fn handler(&self) -> &H {
        &self.handler
    }

    pub fn handler_mut(&mut self) -> &mut H {
        &mut self.handler
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    /// One request frame in, one response frame out.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Vec<u8> {
        let request: Value = match serde_json::from_slice(frame) {
            Ok(v) => v,
            Err(e) => return error_frame(Value::Null, PARSE_ERROR, e.to_string()),
        };
        let id = request.get("id").cloned().unwrap_or(Value::Null);
        match request.get("method").and_then(Value::as_str) {
            Some("registry/list") => {
                let tools = serde_json::to_value(self.registry.tools()).expect("tool specs serialize");
                result_frame(id, json!({ "tools": tools }))
            }
            Some(m) if m.starts_with("tool/") => match parse_envelope(frame) {
                Ok(env) => {
                    if self.registry.get(&env.tool).is_none() {
                        return error_frame(id, METHOD_NOT_FOUND, format!("unknown tool: {}", env.tool));
                    }
                    let outcome = self.handler.call(&env.tool, &env.args, &env.meta);
                    result_frame(id, serde_json::to_value(outcome).expect("tool results serialize"))
                }
                Err(e) => error_frame(id, INVALID_REQUEST, e.to_string()),
            },
            Some(m) => error_frame(id, METHOD_NOT_FOUND, format!("unknown method: {m}")),
            None => error_frame(id, INVALID_REQUEST, "missing method".into()),
        }
    }
}

/// In-process transport that hands every frame straight to a server.
pub struct Loopback<H> {
    server: ToolServer<H>,
    inbox: VecDeque<Vec<u8>>,
}

impl<H: ToolHandler> Loopback<H> {
    pub fn new(server: ToolServer<H>) -> Self {
        Self { server, inbox: VecDeque::new() }
    }

    pub fn server(&self) -> &ToolServer<H> {
        &self.server
    }

    pub fn server_mut(&mut self) -> &mut ToolServer<H> {
        &mut self.server
    }
}

impl<H: ToolHandler> Transport for Loopback<H> {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        let reply = self.server.handle_frame(frame);
        self.inbox.push_back(reply);
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        self.inbox.pop_front().ok_or(TransportError::Closed)
    }
}

/// Sends one envelope and consumes exactly one response frame.
pub fn dispatch(envelope: &Envelope, transport: &mut dyn Transport) -> Result<ToolResult, RouterError> {
    let frame = serialize_envelope(envelope)?;
    transport.send_frame(&frame)?;
    let reply = transport.recv_frame()?;
    let value: Value =
        serde_json::from_slice(&reply).map_err(|e| RouterError::Envelope(EnvelopeError::MalformedJson(e.to_string())))?;
    let got = value.get("id").and_then(Value::as_u64);
    if got != Some(envelope.id) {
        return Err(RouterError::IdMismatch { expected: envelope.id, got: got.unwrap_or(0) });
    }
    if let Some(err) = value.get("error") {
        let code = err.get("code").and_then(Value::as_i64).unwrap_or(0);
        let message = err.get("message").and_then(Value::as_str).unwrap_or_default().to_string();
        return Err(if code == METHOD_NOT_FOUND {
            RouterError::UnknownTool(envelope.tool.clone())
        } else {
            RouterError::Remote { code, message }
        });
    }
    let result = value.get("result").cloned().ok_or_else(|| {
        RouterError::Envelope(EnvelopeError::SchemaViolation { path: "result".into(), reason: "missing field".into() })
    })?;
    serde_json::from_value(result).map_err(|e| {
        RouterError::Envelope(EnvelopeError::SchemaViolation { path: "result".into(), reason: e.to_string() })
    })
}

/// Serves frames from `reader` until end of input.
pub fn serve<H: ToolHandler>(server: &mut ToolServer<H>, reader: impl BufRead, mut writer: impl Write) -> io::Result<()> {
    for line in reader.split(b'\n') {
        let line = line?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        writer.write_all(&server.handle_frame(&line))?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts TCP connections one at a time and serves each until it closes.
pub fn serve_tcp<H: ToolHandler>(server: &mut ToolServer<H>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let reader = BufReader::new(stream.try_clone()?);
        if let Err(e) = serve(server, reader, stream) {
            log::warn!("connection dropped: {e}");
        }
    }
    Ok(())
}
