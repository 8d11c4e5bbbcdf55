//! TCP backend. One connection per worker to the master, length-prefixed frames.
//!
//! A worker opens its connection with a `Control` frame whose payload is its
//! rank as a 2-byte big-endian integer.

use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use super::frame::{read_message, write_message};
use super::{check_link, Endpoint, Message, Rank, Tag, TransportError};

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Conn {
    fn new(stream: TcpStream, timeout: Option<Duration>) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(timeout)?;
        Ok(Conn {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }
}

pub struct TcpEndpoint {
    rank: Rank,
    conns: Vec<Option<Conn>>,
    timeout: Option<Duration>,
    epoch: Instant,
}

pub fn handshake(rank: u16) -> Message {
    Message::new(Tag::Control, rank.to_be_bytes())
}

impl TcpEndpoint {
    /// Accepts `workers` connections on `listener` and returns the master endpoint.
    pub fn accept(
        listener: &TcpListener,
        workers: u16,
        timeout: Option<Duration>,
    ) -> Result<Self, TransportError> {
        let world = workers
            .checked_add(1)
            .ok_or_else(|| TransportError::Protocol("too many workers".into()))?;
        let rank = Rank::new(0, world)?;
        let mut conns: Vec<Option<Conn>> = (0..world).map(|_| None).collect();
        for _ in 0..workers {
            let (stream, peer) = listener.accept()?;
            let mut conn = Conn::new(stream, timeout)?;
            let hello = read_message(&mut conn.reader)
                .map_err(|e| TransportError::Protocol(format!("handshake from {peer}: {e}")))?;
            if hello.tag != Tag::Control || hello.payload.len() != 2 {
                return Err(TransportError::Protocol(format!(
                    "malformed handshake from {peer}"
                )));
            }
            let id = u16::from_be_bytes([hello.payload[0], hello.payload[1]]);
            if id == 0 || id >= world {
                return Err(TransportError::Protocol(format!(
                    "{peer} claims rank {id} in a world of {world}"
                )));
            }
            let slot = &mut conns[id as usize];
            if slot.is_some() {
                return Err(TransportError::Protocol(format!(
                    "rank {id} connected twice"
                )));
            }
            *slot = Some(conn);
        }
        Ok(TcpEndpoint {
            rank,
            conns,
            timeout,
            epoch: Instant::now(),
        })
    }

    /// Connects worker `id` to the master at `addr`, retrying until `timeout`
    /// so that workers may start before the master listens.
    pub fn connect(
        addr: impl ToSocketAddrs,
        id: u16,
        world_size: u16,
        timeout: Option<Duration>,
    ) -> Result<Self, TransportError> {
        let rank = Rank::new(id, world_size)?;
        if rank.is_master() {
            return Err(TransportError::Protocol(
                "the master accepts, it does not connect".into(),
            ));
        }
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
        let deadline = timeout.map(|t| Instant::now() + t);
        let stream = loop {
            match TcpStream::connect(&addrs[..]) {
                Ok(s) => break s,
                Err(e) if deadline.is_some_and(|d| Instant::now() >= d) => return Err(e.into()),
                Err(_) => thread::sleep(Duration::from_millis(20)),
            }
        };
        let mut conn = Conn::new(stream, timeout)?;
        write_message(&mut conn.writer, &handshake(id))?;
        let mut conns: Vec<Option<Conn>> = (0..world_size).map(|_| None).collect();
        conns[0] = Some(conn);
        Ok(TcpEndpoint {
            rank,
            conns,
            timeout,
            epoch: Instant::now(),
        })
    }

    fn conn(&mut self, peer: u16) -> Result<&mut Conn, TransportError> {
        check_link(self.rank, peer)?;
        Ok(self.conns[peer as usize].as_mut().expect("star link"))
    }
}

impl Endpoint for TcpEndpoint {
    fn rank(&self) -> Rank {
        self.rank
    }

    fn send(&mut self, to: u16, msg: &Message) -> Result<(), TransportError> {
        let conn = self.conn(to)?;
        write_message(&mut conn.writer, msg).map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted => TransportError::Disconnected { peer: to },
            _ => TransportError::Io(e),
        })
    }

    fn recv(&mut self, from: u16) -> Result<Message, TransportError> {
        let timeout = self.timeout;
        let conn = self.conn(from)?;
        read_message(&mut conn.reader).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::ConnectionAborted => TransportError::Disconnected { peer: from },
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout {
                peer: from,
                waited: timeout.unwrap_or_default(),
            },
            io::ErrorKind::InvalidData => TransportError::Protocol(e.to_string()),
            _ => TransportError::Io(e),
        })
    }

    fn now(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64()
    }
}
