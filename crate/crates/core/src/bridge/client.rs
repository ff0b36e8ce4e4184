use std::io::{self, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::wire::{encode, read_frame, WireError, WireMessage};

/// Minimal blocking subscriber, used by tests, the demo and the FFI layer.
pub struct BridgeClient {
    stream: TcpStream,
}

impl BridgeClient {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(BridgeClient { stream })
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        self.stream.set_read_timeout(t)
    }

    pub fn send(&mut self, msg: &WireMessage) -> io::Result<()> {
        self.stream.write_all(&encode(msg))
    }

    pub fn subscribe(&mut self, request_id: u32, topics: &[&str]) -> io::Result<()> {
        self.send(&WireMessage::Subscribe { request_id, topics: topics.iter().map(|t| t.to_string()).collect() })
    }

    /// Next message; `Ok(None)` when the server closed the connection.
    pub fn recv(&mut self) -> Result<Option<WireMessage>, WireError> {
        read_frame(&mut self.stream)
    }
}
