use std::io;
use std::net::{SocketAddrV4, UdpSocket};
use std::time::Duration;

/// Carries one encoded datagram between simulated addresses and returns the
/// bytes as received. Delivery order is decided by the scheduler, never by
/// the transport.
pub trait Transport {
    fn name(&self) -> &'static str;
    fn carry(&mut self, from: SocketAddrV4, to: SocketAddrV4, payload: &[u8]) -> io::Result<Vec<u8>>;
}

/// Hands the bytes straight back. Deterministic; the default.
#[derive(Debug, Default, Clone, Copy)]
pub struct InMemoryTransport;

impl Transport for InMemoryTransport {
    fn name(&self) -> &'static str {
        "in-memory"
    }

    fn carry(&mut self, _from: SocketAddrV4, _to: SocketAddrV4, payload: &[u8]) -> io::Result<Vec<u8>> {
        Ok(payload.to_vec())
    }
}

/// Pushes every datagram through a real UDP socket on 127.0.0.1 and reads
/// it back before handing it to the scheduler. Demonstration only.
pub struct LoopbackTransport {
    socket: UdpSocket,
    buf: Vec<u8>,
}

impl LoopbackTransport {
    pub fn bind() -> io::Result<LoopbackTransport> {
        let socket = UdpSocket::bind("127.0.0.1:0")?;
        socket.connect(socket.local_addr()?)?;
        socket.set_read_timeout(Some(Duration::from_secs(2)))?;
        Ok(LoopbackTransport {
            socket,
            buf: vec![0; 65_536],
        })
    }
}

impl Transport for LoopbackTransport {
    fn name(&self) -> &'static str {
        "udp-loopback"
    }

    fn carry(&mut self, _from: SocketAddrV4, _to: SocketAddrV4, payload: &[u8]) -> io::Result<Vec<u8>> {
        if payload.len() > self.buf.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "datagram too large"));
        }
        self.socket.send(payload)?;
        let n = self.socket.recv(&mut self.buf)?;
        Ok(self.buf[..n].to_vec())
    }
}
