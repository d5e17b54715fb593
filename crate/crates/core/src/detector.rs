//! Wire protocol between the gateway and an external count detector,
//! plus the reference sidecar-driven stub.
//!
//! The protocol is line-oriented over any byte stream (stdio or TCP):
//!
//! ```text
//! gateway:  HELLO ecore-detector 1
//! detector: READY
//! gateway:  DETECT <image-path>
//! detector: COUNT <n>        (or: ERR <message>)
//! ```
//!
//! Requests and responses alternate strictly per connection. The stub
//! detector answers from a `<image>.count` sidecar file holding one
//! decimal integer, optionally dropping each object with a seeded
//! probability to mimic an imperfect front-end model.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::estimator::EstimatorError;

pub const HANDSHAKE: &str = "HELLO ecore-detector 1";
pub const HANDSHAKE_ACK: &str = "READY";

/// Client side of one detector connection. Owns the transport and
/// serializes requests; drop kills a spawned detector process.
pub struct DetectorHandle {
    writer: Box<dyn Write + Send>,
    lines: mpsc::Receiver<io::Result<String>>,
    deadline: Duration,
    child: Option<Child>,
}

impl DetectorHandle {
    /// Connect to a detector listening on a TCP address and complete
    /// the handshake.
    pub fn connect_tcp(addr: &str, deadline: Duration) -> Result<Self, EstimatorError> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| EstimatorError::DetectorUnavailable(format!("connect {addr}: {e}")))?;
        // request/response alternation; Nagle would serialize on ACKs
        let _ = stream.set_nodelay(true);
        let reader = stream
            .try_clone()
            .map_err(|e| EstimatorError::DetectorUnavailable(e.to_string()))?;
        let mut handle = Self::start(reader, Box::new(stream), None, deadline);
        handle.handshake()?;
        Ok(handle)
    }

    /// Spawn a detector process speaking the protocol on stdio and
    /// complete the handshake.
    pub fn spawn(cmd: &str, args: &[String], deadline: Duration) -> Result<Self, EstimatorError> {
        let mut child = Command::new(cmd)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| EstimatorError::DetectorUnavailable(format!("spawn {cmd}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take().expect("piped stdin");
        let mut handle = Self::start(stdout, Box::new(stdin), Some(child), deadline);
        handle.handshake()?;
        Ok(handle)
    }

    fn start(
        reader: impl Read + Send + 'static,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
        deadline: Duration,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let buf = BufReader::new(reader);
            for line in buf.lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        Self {
            writer,
            lines: rx,
            deadline,
            child,
        }
    }

    fn send_line(&mut self, line: &str) -> Result<(), EstimatorError> {
        writeln!(self.writer, "{line}")
            .and_then(|_| self.writer.flush())
            .map_err(|e| EstimatorError::DetectorUnavailable(e.to_string()))
    }

    fn recv_line(&mut self) -> Result<String, EstimatorError> {
        match self.lines.recv_timeout(self.deadline) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(EstimatorError::DetectorUnavailable(e.to_string())),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(EstimatorError::DetectorTimeout {
                deadline_ms: self.deadline.as_millis() as u64,
            }),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(EstimatorError::DetectorUnavailable(
                "connection closed".into(),
            )),
        }
    }

    fn handshake(&mut self) -> Result<(), EstimatorError> {
        self.send_line(HANDSHAKE)?;
        let reply = self.recv_line()?;
        if reply != HANDSHAKE_ACK {
            return Err(EstimatorError::DetectorProtocolError(format!(
                "expected `{HANDSHAKE_ACK}`, got `{reply}`"
            )));
        }
        Ok(())
    }

    /// Request the object count for one image path.
    pub fn detect(&mut self, image: &Path) -> Result<u32, EstimatorError> {
        self.send_line(&format!("DETECT {}", image.display()))?;
        let reply = self.recv_line()?;
        if let Some(rest) = reply.strip_prefix("COUNT ") {
            return rest
                .trim()
                .parse()
                .map_err(|_| EstimatorError::DetectorProtocolError(format!("bad count `{rest}`")));
        }
        if let Some(msg) = reply.strip_prefix("ERR ") {
            return Err(EstimatorError::DetectorProtocolError(msg.to_string()));
        }
        Err(EstimatorError::DetectorProtocolError(format!(
            "unexpected reply `{reply}`"
        )))
    }
}

impl Drop for DetectorHandle {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StubOptions {
    pub drop_probability: f64,
    pub seed: u64,
}

impl Default for StubOptions {
    fn default() -> Self {
        Self {
            drop_probability: 0.0,
            seed: 0,
        }
    }
}

/// Serve the stub protocol over one connection until EOF. Each
/// connection gets its own generator seeded from `opts.seed`, so a
/// stream of requests is reproducible.
pub fn serve_stub_connection<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    opts: StubOptions,
) -> io::Result<()> {
    assert!(
        (0.0..=1.0).contains(&opts.drop_probability),
        "drop probability must be in [0, 1]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for line in reader.lines() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if line == HANDSHAKE {
            writeln!(writer, "{HANDSHAKE_ACK}")?;
        } else if let Some(path) = line.strip_prefix("DETECT ") {
            match read_sidecar_count(Path::new(path)) {
                Ok(n) => {
                    let kept = (0..n)
                        .filter(|_| rng.gen_bool(1.0 - opts.drop_probability))
                        .count();
                    writeln!(writer, "COUNT {kept}")?;
                }
                Err(e) => writeln!(writer, "ERR {e}")?,
            }
        } else {
            writeln!(writer, "ERR unsupported command")?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// Accept loop for the TCP stub; one thread per connection.
pub fn serve_stub_tcp(listener: TcpListener, opts: StubOptions) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let _ = stream.set_nodelay(true);
        let reader = stream.try_clone()?;
        std::thread::spawn(move || {
            let _ = serve_stub_connection(BufReader::new(reader), stream, opts);
        });
    }
    Ok(())
}

/// Ground truth for the stub: `<image>.count` next to the image.
pub fn sidecar_path(image: &Path) -> std::path::PathBuf {
    let mut name = image.as_os_str().to_os_string();
    name.push(".count");
    std::path::PathBuf::from(name)
}

fn read_sidecar_count(image: &Path) -> Result<u32, String> {
    let sidecar = sidecar_path(image);
    let text = std::fs::read_to_string(&sidecar)
        .map_err(|e| format!("cannot read {}: {e}", sidecar.display()))?;
    text.trim()
        .parse()
        .map_err(|e| format!("bad count in {}: {e}", sidecar.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    fn spawn_tcp_stub(opts: StubOptions) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let _ = serve_stub_tcp(listener, opts);
        });
        addr
    }

    fn write_image_with_sidecar(dir: &Path, name: &str, count: u32) -> std::path::PathBuf {
        let img = dir.join(name);
        crate::image::ImageRaster::filled(4, 4, 1, 0)
            .save_pnm(&img)
            .unwrap();
        std::fs::write(sidecar_path(&img), format!("{count}\n")).unwrap();
        img
    }

    #[test]
    fn stub_passes_through_sidecar_count() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_image_with_sidecar(dir.path(), "a.pgm", 6);
        let addr = spawn_tcp_stub(StubOptions::default());
        let mut handle = DetectorHandle::connect_tcp(&addr, Duration::from_secs(2)).unwrap();
        assert_eq!(handle.detect(&img).unwrap(), 6);
    }

    #[test]
    fn stub_drop_probability_one_reports_zero() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_image_with_sidecar(dir.path(), "a.pgm", 6);
        let addr = spawn_tcp_stub(StubOptions {
            drop_probability: 1.0,
            seed: 3,
        });
        let mut handle = DetectorHandle::connect_tcp(&addr, Duration::from_secs(2)).unwrap();
        assert_eq!(handle.detect(&img).unwrap(), 0);
    }

    #[test]
    fn missing_sidecar_is_a_protocol_error() {
        let dir = tempfile::tempdir().unwrap();
        let addr = spawn_tcp_stub(StubOptions::default());
        let mut handle = DetectorHandle::connect_tcp(&addr, Duration::from_secs(2)).unwrap();
        let err = handle.detect(&dir.path().join("missing.pgm")).unwrap_err();
        assert!(matches!(err, EstimatorError::DetectorProtocolError(_)));
    }

    #[test]
    fn killed_detector_reports_unavailable() {
        // A server that completes the handshake then drops the socket.
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut w = &stream;
            writeln!(w, "{HANDSHAKE_ACK}").unwrap();
            drop(stream); // dies before serving any request
        });
        let mut handle = DetectorHandle::connect_tcp(&addr, Duration::from_secs(2)).unwrap();
        let err = handle.detect(Path::new("x.pgm")).unwrap_err();
        assert!(matches!(err, EstimatorError::DetectorUnavailable(_)));
    }

    #[test]
    fn silent_detector_times_out() {
        // Completes the handshake, then never answers.
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut w = &stream;
            writeln!(w, "{HANDSHAKE_ACK}").unwrap();
            std::thread::sleep(Duration::from_secs(5));
        });
        let mut handle = DetectorHandle::connect_tcp(&addr, Duration::from_millis(100)).unwrap();
        let err = handle.detect(Path::new("x.pgm")).unwrap_err();
        assert!(matches!(err, EstimatorError::DetectorTimeout { .. }));
    }

    #[test]
    fn garbage_reply_is_a_protocol_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut w = &stream;
            writeln!(w, "{HANDSHAKE_ACK}").unwrap();
            line.clear();
            reader.read_line(&mut line).unwrap();
            writeln!(w, "BANANAS").unwrap();
        });
        let mut handle = DetectorHandle::connect_tcp(&addr, Duration::from_secs(2)).unwrap();
        let err = handle.detect(Path::new("x.pgm")).unwrap_err();
        assert!(matches!(err, EstimatorError::DetectorProtocolError(_)));
    }
}
