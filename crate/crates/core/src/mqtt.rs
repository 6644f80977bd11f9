//! Minimal MQTT 3.1.1 front end for the bus.
//!
//! Supports CONNECT, PUBLISH and SUBSCRIBE at QoS 0, plus UNSUBSCRIBE,
//! PINGREQ and DISCONNECT. Topic filters must be exact names; wildcard
//! filters are refused in the SUBACK. Each connection gets a reader thread
//! and one forwarding thread per subscription.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use crate::bus::{Bus, BusError, RecvError};

const CONNECT: u8 = 1;
const CONNACK: u8 = 2;
const PUBLISH: u8 = 3;
const SUBSCRIBE: u8 = 8;
const SUBACK: u8 = 9;
const UNSUBSCRIBE: u8 = 10;
const UNSUBACK: u8 = 11;
const PINGREQ: u8 = 12;
const PINGRESP: u8 = 13;
const DISCONNECT: u8 = 14;

const MAX_PACKET: usize = 1 << 20;
const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum MqttError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

fn protocol(msg: impl Into<String>) -> MqttError {
    MqttError::Protocol(msg.into())
}

/// A control packet: type, header flags and body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub kind: u8,
    pub flags: u8,
    pub body: Vec<u8>,
}

impl Packet {
    pub fn new(kind: u8, flags: u8, body: Vec<u8>) -> Self {
        Self { kind, flags, body }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![(self.kind << 4) | (self.flags & 0x0f)];
        let mut len = self.body.len();
        loop {
            let mut byte = (len % 128) as u8;
            len /= 128;
            if len > 0 {
                byte |= 0x80;
            }
            out.push(byte);
            if len == 0 {
                break;
            }
        }
        out.extend_from_slice(&self.body);
        out
    }

    /// Reads one packet; `Ok(None)` on a clean end of stream.
    pub fn read(input: &mut impl Read) -> Result<Option<Self>, MqttError> {
        let mut first = [0u8; 1];
        match input.read_exact(&mut first) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let mut len = 0usize;
        let mut shift = 0;
        loop {
            let mut b = [0u8; 1];
            input.read_exact(&mut b)?;
            len |= usize::from(b[0] & 0x7f) << shift;
            if b[0] & 0x80 == 0 {
                break;
            }
            shift += 7;
            if shift > 21 {
                return Err(protocol("remaining length longer than four bytes"));
            }
        }
        if len > MAX_PACKET {
            return Err(protocol(format!("packet of {len} bytes is too large")));
        }
        let mut body = vec![0u8; len];
        input.read_exact(&mut body)?;
        Ok(Some(Self {
            kind: first[0] >> 4,
            flags: first[0] & 0x0f,
            body,
        }))
    }
}

pub fn encode_str(s: &str, out: &mut Vec<u8>) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// QoS 0 PUBLISH packet.
pub fn publish_packet(topic: &str, payload: &[u8]) -> Packet {
    let mut body = Vec::with_capacity(topic.len() + payload.len() + 2);
    encode_str(topic, &mut body);
    body.extend_from_slice(payload);
    Packet::new(PUBLISH, 0, body)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn u8(&mut self) -> Result<u8, MqttError> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or_else(|| protocol("truncated packet"))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, MqttError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn string(&mut self) -> Result<&'a str, MqttError> {
        let len = usize::from(self.u16()?);
        let bytes = self
            .buf
            .get(self.pos..self.pos + len)
            .ok_or_else(|| protocol("truncated string"))?;
        self.pos += len;
        std::str::from_utf8(bytes).map_err(|_| protocol("string is not UTF-8"))
    }

    fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos.min(self.buf.len())..]
    }

    fn done(&self) -> bool {
        self.pos >= self.buf.len()
    }
}

/// A running listener. Dropping it stops accepting and closes connections.
pub struct MqttListener {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
}

impl MqttListener {
    pub fn bind(addr: impl ToSocketAddrs, bus: Bus) -> Result<Self, MqttError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let worker = {
            let stop = stop.clone();
            std::thread::Builder::new()
                .name("mqtt-listener".into())
                .spawn(move || accept_loop(listener, bus, stop))
                .expect("spawn mqtt listener")
        };
        Ok(Self {
            addr,
            stop,
            worker: Some(worker),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.close();
    }

    fn close(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for MqttListener {
    fn drop(&mut self) {
        self.close();
    }
}

fn accept_loop(listener: TcpListener, bus: Bus, stop: Arc<AtomicBool>) {
    let mut connections: Vec<(TcpStream, JoinHandle<()>)> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let setup = stream
                    .set_nonblocking(false)
                    .and_then(|_| stream.try_clone());
                let Ok(handle_copy) = setup else {
                    continue;
                };
                let (bus, stop) = (bus.clone(), stop.clone());
                let worker = std::thread::Builder::new()
                    .name(format!("mqtt {peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, bus, stop) {
                            log::warn!("mqtt client {peer}: {e}");
                        }
                    });
                if let Ok(worker) = worker {
                    connections.push((handle_copy, worker));
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::error!("mqtt accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
        connections.retain(|(_, w)| !w.is_finished());
    }
    for (stream, worker) in connections {
        let _ = stream.shutdown(Shutdown::Both);
        let _ = worker.join();
    }
}

type SharedWriter = Arc<Mutex<TcpStream>>;

fn send(writer: &SharedWriter, packet: &Packet) -> io::Result<()> {
    writer
        .lock()
        .expect("mqtt writer poisoned")
        .write_all(&packet.encode())
}

struct Forwarder {
    alive: Arc<AtomicBool>,
    worker: JoinHandle<()>,
}

fn forward(bus: &Bus, topic: &str, writer: SharedWriter) -> Result<Forwarder, MqttError> {
    let subscription = bus.subscribe(topic)?;
    let alive = Arc::new(AtomicBool::new(true));
    let worker = {
        let alive = alive.clone();
        std::thread::Builder::new()
            .name(format!("mqtt forward {topic}"))
            .spawn(move || {
                while alive.load(Ordering::SeqCst) {
                    match subscription.recv_timeout(POLL) {
                        Ok(msg) => {
                            if send(&writer, &publish_packet(&msg.topic, msg.payload.as_bytes()))
                                .is_err()
                            {
                                return;
                            }
                        }
                        Err(RecvError::Timeout) => {}
                        Err(RecvError::Closed) => return,
                    }
                }
            })
            .expect("spawn mqtt forwarder")
    };
    Ok(Forwarder { alive, worker })
}

fn serve_connection(stream: TcpStream, bus: Bus, stop: Arc<AtomicBool>) -> Result<(), MqttError> {
    let writer: SharedWriter = Arc::new(Mutex::new(stream.try_clone()?));
    let mut reader = io::BufReader::new(stream);
    let mut forwarders: HashMap<String, Forwarder> = HashMap::new();
    let result = (|| -> Result<(), MqttError> {
        let first = Packet::read(&mut reader)?.ok_or_else(|| protocol("closed before CONNECT"))?;
        if first.kind != CONNECT {
            return Err(protocol(format!(
                "expected CONNECT, got packet type {}",
                first.kind
            )));
        }
        let mut c = Cursor {
            buf: &first.body,
            pos: 0,
        };
        let name = c.string()?;
        let level = c.u8()?;
        if name != "MQTT" || level != 4 {
            send(&writer, &Packet::new(CONNACK, 0, vec![0, 1]))?;
            return Err(protocol(format!(
                "unsupported protocol {name} level {level}"
            )));
        }
        send(&writer, &Packet::new(CONNACK, 0, vec![0, 0]))?;

        while !stop.load(Ordering::SeqCst) {
            let Some(packet) = Packet::read(&mut reader)? else {
                return Ok(());
            };
            let mut c = Cursor {
                buf: &packet.body,
                pos: 0,
            };
            match packet.kind {
                PUBLISH => {
                    if packet.flags & 0b0110 != 0 {
                        return Err(protocol("only QoS 0 publishing is supported"));
                    }
                    let topic = c.string()?;
                    let payload = std::str::from_utf8(c.rest())
                        .map_err(|_| protocol("payload is not UTF-8"))?;
                    bus.publish(topic, payload)?;
                }
                SUBSCRIBE => {
                    let id = c.u16()?;
                    let mut codes = Vec::new();
                    while !c.done() {
                        let filter = c.string()?.to_owned();
                        let _qos = c.u8()?;
                        if filter.is_empty() || filter.contains(['+', '#']) {
                            codes.push(0x80);
                            continue;
                        }
                        if let Entry::Vacant(slot) = forwarders.entry(filter) {
                            let f = forward(&bus, slot.key(), writer.clone())?;
                            slot.insert(f);
                        }
                        codes.push(0x00);
                    }
                    let mut body = id.to_be_bytes().to_vec();
                    body.extend(codes);
                    send(&writer, &Packet::new(SUBACK, 0, body))?;
                }
                UNSUBSCRIBE => {
                    let id = c.u16()?;
                    while !c.done() {
                        if let Some(f) = forwarders.remove(c.string()?) {
                            f.alive.store(false, Ordering::SeqCst);
                            let _ = f.worker.join();
                        }
                    }
                    send(
                        &writer,
                        &Packet::new(UNSUBACK, 0, id.to_be_bytes().to_vec()),
                    )?;
                }
                PINGREQ => send(&writer, &Packet::new(PINGRESP, 0, Vec::new()))?,
                DISCONNECT => return Ok(()),
                other => return Err(protocol(format!("unsupported packet type {other}"))),
            }
        }
        Ok(())
    })();
    for (_, f) in forwarders {
        f.alive.store(false, Ordering::SeqCst);
        let _ = f.worker.join();
    }
    let _ = writer
        .lock()
        .expect("mqtt writer poisoned")
        .shutdown(Shutdown::Both);
    result
}
