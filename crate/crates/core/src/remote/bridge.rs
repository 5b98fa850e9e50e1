use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::models::Predictor;

pub const BRIDGE_PROTOCOL: &str = "trace-bridge/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "lowercase")]
pub enum Transport {
    /// Spawn a server and talk over its stdin/stdout.
    Stdio {
        program: String,
        #[serde(default)]
        args: Vec<String>,
    },
    Tcp { addr: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeEndpoint {
    #[serde(flatten)]
    pub transport: Transport,
    #[serde(default = "default_protocol")]
    pub protocol: String,
}

fn default_protocol() -> String {
    BRIDGE_PROTOCOL.to_string()
}

impl BridgeEndpoint {
    pub fn stdio(program: impl Into<String>, args: impl IntoIterator<Item = impl Into<String>>) -> Self {
        BridgeEndpoint {
            transport: Transport::Stdio {
                program: program.into(),
                args: args.into_iter().map(Into::into).collect(),
            },
            protocol: default_protocol(),
        }
    }

    pub fn tcp(addr: impl Into<String>) -> Self {
        BridgeEndpoint {
            transport: Transport::Tcp { addr: addr.into() },
            protocol: default_protocol(),
        }
    }

    /// Opens the connection and completes the handshake.
    pub fn connect(&self) -> Result<BridgeSession> {
        let (reader, writer, child): (Box<dyn BufRead + Send>, Box<dyn Write + Send>, _) = match &self.transport {
            Transport::Stdio { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("stdin is piped");
                let stdout = child.stdout.take().expect("stdout is piped");
                (Box::new(BufReader::new(stdout)), Box::new(stdin), Some(child))
            }
            Transport::Tcp { addr } => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                (Box::new(BufReader::new(stream.try_clone()?)), Box::new(stream), None)
            }
        };
        BridgeSession::handshake(reader, writer, child, &self.protocol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeKind {
    Predict,
    Latent,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BridgeOutput {
    LogOdds(Vec<f64>),
    Vectors(Vec<Vec<f64>>),
}

/// One open protocol session. Requests carry increasing ids and responses
/// must come back in request order.
pub struct BridgeSession {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    child: Option<Child>,
    latent_dim: Option<usize>,
    next_id: u64,
}

fn protocol_error(reason: impl Into<String>, line: &str) -> Error {
    Error::Protocol {
        reason: reason.into(),
        line: line.trim_end().to_string(),
    }
}

impl BridgeSession {
    /// Reads the server's handshake line from an already open stream.
    pub fn handshake(
        mut reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
        protocol: &str,
    ) -> Result<Self> {
        let line = read_line(&mut reader)?;
        let v: Value = serde_json::from_str(&line).map_err(|e| protocol_error(format!("bad handshake: {e}"), &line))?;
        if v["protocol"] != protocol {
            return Err(protocol_error(format!("expected protocol {protocol:?}"), &line));
        }
        let latent_dim = match &v["latent_dim"] {
            Value::Null => None,
            d => Some(
                d.as_u64()
                    .filter(|&d| d > 0)
                    .ok_or_else(|| protocol_error("latent_dim must be a positive integer or null", &line))?
                    as usize,
            ),
        };
        Ok(BridgeSession {
            reader,
            writer: Some(writer),
            child,
            latent_dim,
            next_id: 0,
        })
    }

    pub fn latent_dim(&self) -> Option<usize> {
        self.latent_dim
    }

    pub fn call(&mut self, kind: BridgeKind, texts: &[String]) -> Result<BridgeOutput> {
        let mut out = self.call_pipelined(&[(kind, texts.to_vec())])?;
        Ok(out.remove(0))
    }

    /// Writes every request before reading any response. Each response id
    /// must equal the id of the request in the same position.
    pub fn call_pipelined(&mut self, batch: &[(BridgeKind, Vec<String>)]) -> Result<Vec<BridgeOutput>> {
        if batch.iter().any(|(_, texts)| texts.is_empty()) {
            return Err(Error::invalid("bridge request needs at least one text"));
        }
        let first = self.next_id;
        {
            let writer = self.writer.as_mut().ok_or(Error::BridgeClosed)?;
            for (i, (kind, texts)) in batch.iter().enumerate() {
                let req = json!({"id": first + i as u64, "kind": kind, "texts": texts});
                writeln!(writer, "{req}").map_err(closed_on_pipe)?;
            }
            writer.flush().map_err(closed_on_pipe)?;
        }
        self.next_id += batch.len() as u64;
        batch
            .iter()
            .enumerate()
            .map(|(i, (kind, texts))| {
                let line = read_line(&mut self.reader)?;
                self.parse_response(&line, first + i as u64, *kind, texts.len())
            })
            .collect()
    }

    fn parse_response(&self, line: &str, id: u64, kind: BridgeKind, n: usize) -> Result<BridgeOutput> {
        let v: Value = serde_json::from_str(line).map_err(|e| protocol_error(format!("invalid JSON: {e}"), line))?;
        if v["id"].as_u64() != Some(id) {
            return Err(protocol_error(format!("expected response id {id}"), line));
        }
        if let Some(msg) = v.get("error") {
            return Err(protocol_error(format!("server error: {msg}"), line));
        }
        let numbers = |x: &Value| -> Option<Vec<f64>> { x.as_array()?.iter().map(Value::as_f64).collect() };
        match kind {
            BridgeKind::Predict => {
                let z = numbers(&v["log_odds"]).ok_or_else(|| protocol_error("missing numeric log_odds", line))?;
                if z.len() != n {
                    return Err(protocol_error(format!("expected {n} log-odds, got {}", z.len()), line));
                }
                Ok(BridgeOutput::LogOdds(z))
            }
            BridgeKind::Latent => {
                let vs: Vec<Vec<f64>> = v["vectors"]
                    .as_array()
                    .and_then(|rows| rows.iter().map(numbers).collect())
                    .ok_or_else(|| protocol_error("missing numeric vectors", line))?;
                if vs.len() != n {
                    return Err(protocol_error(format!("expected {n} vectors, got {}", vs.len()), line));
                }
                let dim = self.latent_dim.unwrap_or_else(|| vs[0].len());
                if vs.iter().any(|x| x.len() != dim) {
                    return Err(protocol_error(format!("vectors must all have dimension {dim}"), line));
                }
                Ok(BridgeOutput::Vectors(vs))
            }
        }
    }

    pub fn predict(&mut self, texts: &[String]) -> Result<Vec<f64>> {
        match self.call(BridgeKind::Predict, texts)? {
            BridgeOutput::LogOdds(z) => Ok(z),
            BridgeOutput::Vectors(_) => unreachable!("predict responses are parsed as log-odds"),
        }
    }

    pub fn latent(&mut self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        match self.call(BridgeKind::Latent, texts)? {
            BridgeOutput::Vectors(v) => Ok(v),
            BridgeOutput::LogOdds(_) => unreachable!("latent responses are parsed as vectors"),
        }
    }
}

fn closed_on_pipe(e: std::io::Error) -> Error {
    match e.kind() {
        ErrorKind::BrokenPipe | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted => Error::BridgeClosed,
        _ => Error::Io(e),
    }
}

fn read_line(reader: &mut dyn BufRead) -> Result<String> {
    let mut line = String::new();
    match reader.read_line(&mut line) {
        Ok(0) => Err(Error::BridgeClosed),
        Ok(_) => Ok(line),
        Err(e) => Err(closed_on_pipe(e)),
    }
}

impl Drop for BridgeSession {
    fn drop(&mut self) {
        // closing stdin is the shutdown signal for stdio servers
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            if !matches!(child.try_wait(), Ok(Some(_))) {
                let _ = child.kill();
            }
            let _ = child.wait();
        }
    }
}

/// A bridge session shared behind a lock, usable wherever a [`Predictor`]
/// is expected.
pub struct BridgePredictor {
    session: Mutex<BridgeSession>,
    latent_dim: Option<usize>,
    /// Texts per request in batch calls.
    pub batch_size: usize,
}

impl BridgePredictor {
    pub fn new(session: BridgeSession) -> Self {
        BridgePredictor {
            latent_dim: session.latent_dim(),
            session: Mutex::new(session),
            batch_size: 64,
        }
    }

    pub fn connect(endpoint: &BridgeEndpoint) -> Result<Self> {
        Ok(Self::new(endpoint.connect()?))
    }

    fn with<T>(&self, f: impl FnOnce(&mut BridgeSession) -> Result<T>) -> Result<T> {
        let mut guard = self.session.lock().map_err(|_| Error::BridgeClosed)?;
        f(&mut guard)
    }
}

impl Predictor for BridgePredictor {
    fn predict_log_odds(&self, text: &str) -> Result<f64> {
        Ok(self.with(|s| s.predict(&[text.to_string()]))?[0])
    }

    fn predict_batch(&self, texts: &[String]) -> Result<Vec<f64>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let batch: Vec<_> = texts.chunks(self.batch_size.max(1)).map(|c| (BridgeKind::Predict, c.to_vec())).collect();
        let out = self.with(|s| s.call_pipelined(&batch))?;
        Ok(out
            .into_iter()
            .flat_map(|o| match o {
                BridgeOutput::LogOdds(z) => z,
                BridgeOutput::Vectors(_) => unreachable!("predict responses are parsed as log-odds"),
            })
            .collect())
    }

    fn latent_dim(&self) -> Option<usize> {
        self.latent_dim
    }

    fn latent(&self, text: &str) -> Result<Vec<f64>> {
        if self.latent_dim.is_none() {
            return Err(Error::Unsupported("bridge server does not expose latent vectors".into()));
        }
        Ok(self.with(|s| s.latent(&[text.to_string()]))?.remove(0))
    }

    fn latent_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if self.latent_dim.is_none() {
            return Err(Error::Unsupported("bridge server does not expose latent vectors".into()));
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let batch: Vec<_> = texts.chunks(self.batch_size.max(1)).map(|c| (BridgeKind::Latent, c.to_vec())).collect();
        let out = self.with(|s| s.call_pipelined(&batch))?;
        Ok(out
            .into_iter()
            .flat_map(|o| match o {
                BridgeOutput::Vectors(v) => v,
                BridgeOutput::LogOdds(_) => unreachable!("latent responses are parsed as vectors"),
            })
            .collect())
    }
}
