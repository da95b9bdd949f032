//! Thread-per-connection TCP plumbing shared by both services.

use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::error::{ErrorCode, ProtocolError, Result};
use crate::frame::{read_frame, read_reply, write_frame, Frame, Incoming};

/// A running service; dropping it stops accepting connections.
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Block until the accept loop ends (it only ends on shutdown).
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_accepting();
        }
    }
}

/// Answers one request frame with one reply frame.
pub(crate) trait Handler: Send + Sync + 'static {
    fn handle(&self, frame: Frame) -> Frame;
}

pub(crate) fn spawn_service<H: Handler>(
    listener: TcpListener,
    handler: Arc<H>,
    timeout: Duration,
) -> Result<ServiceHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = std::thread::spawn(move || {
        for stream in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let h = handler.clone();
            std::thread::spawn(move || {
                let _ = serve_connection(stream, h.as_ref(), timeout);
            });
        }
    });
    Ok(ServiceHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

fn serve_connection(stream: TcpStream, handler: &dyn Handler, timeout: Duration) -> Result<()> {
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let reply = match read_frame(&mut reader) {
            Ok(Incoming::Frame(f)) => handler.handle(f),
            Ok(Incoming::UnknownType { kind, session }) => {
                Frame::error(session, ErrorCode::UnknownType, format!("unknown frame type {kind}"))
            }
            Ok(Incoming::Closed) => return Ok(()),
            Err(e) => {
                // the stream is out of sync; report and hang up
                let _ = write_frame(&mut writer, &Frame::error(0, e.code(), e.to_string()));
                return Err(e);
            }
        };
        write_frame(&mut writer, &reply)?;
    }
}

/// Open a client connection with timeouts.
pub fn connect(addr: &str, timeout: Duration) -> Result<TcpStream> {
    let sock = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| ProtocolError::Config(format!("address {addr} does not resolve")))?;
    let stream = TcpStream::connect_timeout(&sock, timeout)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    Ok(stream)
}

/// Send one frame and read the reply on a fresh connection.
pub fn request(addr: &str, frame: &Frame, timeout: Duration) -> Result<Frame> {
    let mut stream = connect(addr, timeout)?;
    write_frame(&mut stream, frame)?;
    read_reply(&mut BufReader::new(stream))
}

/// Reply to a failed request.
pub(crate) fn error_reply(session: u128, e: &ProtocolError) -> Frame {
    Frame::error(session, e.code(), e.to_string())
}
