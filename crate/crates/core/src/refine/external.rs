//! Client for refiner processes reached over TCP or a child's stdio.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use crate::datamodel::{ImageFrame, SoftMask};
use crate::error::{Error, Result};

use super::protocol::{
    bytes_to_mask, handshake_bytes, parse_handshake, read_frame, RefineRequest, RefineResponse,
    ENGINE_MAGIC, PROCESS_MAGIC,
};
use super::{enforce_output, Refiner};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Where the refiner process lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port`, optionally prefixed with `tcp://`.
    Tcp(String),
    /// `exec:program arg...`: spawn and talk over stdin/stdout.
    Command(Vec<String>),
}

impl std::str::FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(Error::config("exec endpoint needs a program"));
            }
            return Ok(Endpoint::Command(argv));
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if !addr.contains(':') {
            return Err(Error::config(format!(
                "endpoint {s:?} is neither host:port nor exec:<command>"
            )));
        }
        Ok(Endpoint::Tcp(addr.to_owned()))
    }
}

enum Incoming {
    Frame(Vec<u8>),
    Failed(Error),
}

struct Connection {
    writer: Box<dyn Write + Send>,
    incoming: Receiver<Incoming>,
    child: Option<Child>,
}

impl Connection {
    fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        let (reader, writer, child): (Box<dyn Read + Send>, Box<dyn Write + Send>, _) =
            match endpoint {
                Endpoint::Tcp(addr) => {
                    let stream = TcpStream::connect(addr)
                        .map_err(|e| Error::Refiner(format!("connect to {addr}: {e}")))?;
                    stream.set_nodelay(true).ok();
                    stream.set_write_timeout(Some(timeout))?;
                    (Box::new(stream.try_clone()?), Box::new(stream), None)
                }
                Endpoint::Command(argv) => {
                    let mut child = Command::new(&argv[0])
                        .args(&argv[1..])
                        .stdin(Stdio::piped())
                        .stdout(Stdio::piped())
                        .spawn()
                        .map_err(|e| Error::Refiner(format!("spawn {:?}: {e}", argv[0])))?;
                    let stdout = child.stdout.take().expect("piped stdout");
                    let stdin = child.stdin.take().expect("piped stdin");
                    (Box::new(stdout), Box::new(stdin), Some(child))
                }
            };
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || reader_loop(reader, tx));
        let mut conn = Connection {
            writer,
            incoming: rx,
            child,
        };
        conn.writer.write_all(&handshake_bytes(ENGINE_MAGIC))?;
        conn.writer.flush()?;
        let reply = conn.receive(timeout)?;
        let reply: [u8; 8] = reply
            .as_slice()
            .try_into()
            .map_err(|_| Error::Protocol("malformed handshake reply".into()))?;
        parse_handshake(&reply, PROCESS_MAGIC)?;
        Ok(conn)
    }

    fn receive(&mut self, timeout: Duration) -> Result<Vec<u8>> {
        match self.incoming.recv_timeout(timeout) {
            Ok(Incoming::Frame(bytes)) => Ok(bytes),
            Ok(Incoming::Failed(e)) => Err(e),
            Err(RecvTimeoutError::Timeout) => Err(Error::Refiner(format!(
                "no response within {:.1} s",
                timeout.as_secs_f64()
            ))),
            Err(RecvTimeoutError::Disconnected) => {
                Err(Error::Protocol("refiner closed the connection".into()))
            }
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn reader_loop(mut reader: Box<dyn Read + Send>, tx: mpsc::Sender<Incoming>) {
    let mut hello = [0u8; 8];
    if let Err(e) = reader.read_exact(&mut hello) {
        let _ = tx.send(Incoming::Failed(Error::Protocol(format!("handshake: {e}"))));
        return;
    }
    if tx.send(Incoming::Frame(hello.to_vec())).is_err() {
        return;
    }
    loop {
        match read_frame(&mut reader) {
            Ok(Some(body)) => {
                if tx.send(Incoming::Frame(body)).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = tx.send(Incoming::Failed(Error::Protocol(
                    "refiner closed the connection".into(),
                )));
                return;
            }
            Err(e) => {
                let _ = tx.send(Incoming::Failed(e));
                return;
            }
        }
    }
}

/// Refiner backed by one or more connections to an external process. Each
/// connection carries one request at a time.
pub struct ExternalRefiner {
    pool: Vec<Mutex<Connection>>,
    timeout: Duration,
}

impl ExternalRefiner {
    pub fn connect(endpoint: &Endpoint) -> Result<Self> {
        Self::connect_pool(endpoint, 1, DEFAULT_TIMEOUT)
    }

    pub fn connect_pool(
        endpoint: &Endpoint,
        connections: usize,
        timeout: Duration,
    ) -> Result<Self> {
        let pool = (0..connections.max(1))
            .map(|_| Connection::open(endpoint, timeout).map(Mutex::new))
            .collect::<Result<_>>()?;
        Ok(ExternalRefiner { pool, timeout })
    }

    fn exchange(&self, conn: &mut Connection, req: &RefineRequest) -> Result<RefineResponse> {
        conn.writer.write_all(&req.encode())?;
        conn.writer.flush()?;
        let body = conn.receive(self.timeout)?;
        let resp = RefineResponse::decode_body(&body, req.mask.len())?;
        if resp.frame_index != req.frame_index {
            return Err(Error::Protocol(format!(
                "response echoes frame {}, expected {}",
                resp.frame_index, req.frame_index
            )));
        }
        Ok(resp)
    }
}

impl Refiner for ExternalRefiner {
    fn refine(&self, frame: &ImageFrame, coarse: &SoftMask) -> Result<SoftMask> {
        let req = RefineRequest::from_inputs(frame, coarse)?;
        let slot = self
            .pool
            .iter()
            .find_map(|m| m.try_lock().ok())
            .map(Ok)
            .unwrap_or_else(|| {
                self.pool[coarse.frame_index() % self.pool.len()]
                    .lock()
                    .map_err(|_| Error::Refiner("connection lock poisoned".into()))
            });
        let mut conn = slot?;
        let resp = self.exchange(&mut conn, &req)?;
        enforce_output(coarse, bytes_to_mask(&resp.mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Dims;
    use crate::refine::protocol::serve;
    use crate::refine::IdentityRefiner;
    use std::net::TcpListener;

    fn spawn_server(handler: fn(&RefineRequest) -> Vec<u8>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let stream = stream.unwrap();
                thread::spawn(move || {
                    let _ = serve(stream.try_clone().unwrap(), stream, handler);
                });
            }
        });
        addr
    }

    fn inputs() -> (ImageFrame, SoftMask) {
        let d = Dims::new(4, 3).unwrap();
        let f = ImageFrame::filled(d, [10, 20, 30]);
        let m = SoftMask::new(
            2,
            1,
            d,
            (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect(),
        )
        .unwrap();
        (f, m)
    }

    #[test]
    fn echo_server_acts_as_identity() {
        let addr = spawn_server(|req| req.mask.clone());
        let ext = ExternalRefiner::connect(&Endpoint::Tcp(addr)).unwrap();
        let (f, m) = inputs();
        assert_eq!(
            ext.refine(&f, &m).unwrap(),
            IdentityRefiner.refine(&f, &m).unwrap()
        );
    }

    #[test]
    fn short_response_is_protocol_error() {
        let addr = spawn_server(|req| req.mask[..req.mask.len() - 1].to_vec());
        let ext = ExternalRefiner::connect(&Endpoint::Tcp(addr)).unwrap();
        let (f, m) = inputs();
        assert!(matches!(ext.refine(&f, &m), Err(Error::Protocol(_))));
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            "tcp://a:1".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("a:1".into())
        );
        assert_eq!(
            "a:1".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("a:1".into())
        );
        assert_eq!(
            "exec:python3 srv.py --mode echo"
                .parse::<Endpoint>()
                .unwrap(),
            Endpoint::Command(vec![
                "python3".into(),
                "srv.py".into(),
                "--mode".into(),
                "echo".into()
            ])
        );
        assert!("nohost".parse::<Endpoint>().is_err());
    }
}
