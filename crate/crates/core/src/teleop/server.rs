//! TCP endpoint for a live operator.
//!
//! Socket handling and the simulation loop run on separate threads and talk only
//! through two channels: connection events in, encoded telemetry out. One
//! operator at a time; a second connection is closed immediately.
//!
//! Stream layout: both sides send the 4-byte hello first, then every frame is
//! preceded by a single length byte.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::frame::{TelemetryFrame, HELLO};
use super::link::Link;
use super::session::{SessionState, TeleopSession};
use crate::error::{Error, Result};
use crate::scenario::ScenarioConfig;
use crate::sim::{Simulation, TrialLog, TrialStatus};

/// Longest frame the reader accepts; anything longer is discarded as malformed.
pub const MAX_FRAME: usize = 64;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug)]
enum Event {
    Open(u64, Sender<Vec<u8>>),
    Frame(u64, Vec<u8>),
    Malformed(u64),
    Closed(u64),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Simulated seconds per wall-clock second. Non-finite or non-positive runs unpaced.
    pub time_scale: f64,
    /// Stop after this much simulated time.
    pub max_time: Option<f64>,
    /// End the run as soon as the goal is reached.
    pub stop_at_goal: bool,
    pub stop: Arc<AtomicBool>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            time_scale: 1.0,
            max_time: None,
            stop_at_goal: false,
            stop: Arc::new(AtomicBool::new(false)),
        }
    }
}

#[derive(Debug)]
pub struct ServeReport {
    pub log: TrialLog,
    pub malformed: u64,
    /// Connections turned away because an operator was already attached.
    pub rejected: u64,
    pub sessions: u64,
    pub telemetry_sent: u64,
}

#[derive(Debug)]
pub struct Server {
    listener: TcpListener,
    addr: SocketAddr,
}

impl Server {
    /// Binds now so a busy port is reported before any simulation starts.
    pub fn bind(addr: impl Into<SocketAddr>) -> Result<Self> {
        let addr = addr.into();
        let listener = TcpListener::bind(addr).map_err(|source| Error::Bind {
            addr: addr.to_string(),
            source,
        })?;
        let addr = listener.local_addr().map_err(|source| Error::Bind {
            addr: addr.to_string(),
            source,
        })?;
        Ok(Self { listener, addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Serves until `opts.stop` is raised, `max_time` elapses, the goal is
    /// reached (if asked), or the vehicle diverges.
    pub fn run(self, cfg: &ScenarioConfig, opts: &ServeOptions) -> Result<ServeReport> {
        let (events_tx, events_rx) = mpsc::channel();
        let shutdown = Arc::new(AtomicBool::new(false));
        let rejected = Arc::new(AtomicU64::new(0));
        self.listener
            .set_nonblocking(true)
            .map_err(|e| Error::io("listener", e))?;
        let acceptor = {
            let shutdown = shutdown.clone();
            let rejected = rejected.clone();
            thread::spawn(move || accept_loop(self.listener, events_tx, shutdown, rejected))
        };
        let result = sim_loop(cfg, opts, events_rx);
        shutdown.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        let (log, malformed, sessions, telemetry_sent) = result?;
        Ok(ServeReport {
            log,
            malformed,
            rejected: rejected.load(Ordering::SeqCst),
            sessions,
            telemetry_sent,
        })
    }
}

fn accept_loop(
    listener: TcpListener,
    events: Sender<Event>,
    shutdown: Arc<AtomicBool>,
    rejected: Arc<AtomicU64>,
) {
    let busy = Arc::new(AtomicBool::new(false));
    let mut next_id = 0u64;
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if busy.swap(true, Ordering::SeqCst) {
                    rejected.fetch_add(1, Ordering::SeqCst);
                    let _ = stream.shutdown(Shutdown::Both);
                    continue;
                }
                next_id += 1;
                let (id, events, shutdown, busy) =
                    (next_id, events.clone(), shutdown.clone(), busy.clone());
                workers.push(thread::spawn(move || {
                    let _ = connection(id, stream, &events, &shutdown);
                    let _ = events.send(Event::Closed(id));
                    busy.store(false, Ordering::SeqCst);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

/// Fills `buf`, tolerating read timeouts. `Ok(false)` on clean EOF or shutdown.
fn read_full(stream: &mut TcpStream, buf: &mut [u8], shutdown: &AtomicBool) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(false);
        }
        match stream.read(&mut buf[filled..]) {
            Ok(0) => return Ok(false),
            Ok(n) => filled += n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

fn connection(id: u64, mut stream: TcpStream, events: &Sender<Event>, shutdown: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let mut hello = [0u8; 4];
    if !read_full(&mut stream, &mut hello, shutdown)? || hello != HELLO {
        return Ok(());
    }
    stream.write_all(&HELLO)?;

    let (telemetry_tx, telemetry_rx) = mpsc::channel::<Vec<u8>>();
    let writer = {
        let mut out = stream.try_clone()?;
        thread::spawn(move || {
            for bytes in telemetry_rx {
                let len = [bytes.len() as u8];
                if out.write_all(&len).and_then(|_| out.write_all(&bytes)).is_err() {
                    break;
                }
            }
        })
    };
    if events.send(Event::Open(id, telemetry_tx)).is_err() {
        return Ok(());
    }

    let mut len = [0u8; 1];
    let mut body = [0u8; 255];
    let result = loop {
        match read_full(&mut stream, &mut len, shutdown) {
            Ok(true) => {}
            Ok(false) => break Ok(()),
            Err(e) => break Err(e),
        }
        let n = len[0] as usize;
        match read_full(&mut stream, &mut body[..n], shutdown) {
            Ok(true) => {}
            Ok(false) => break Ok(()),
            Err(e) => break Err(e),
        }
        let event = if n == 0 || n > MAX_FRAME {
            Event::Malformed(id)
        } else {
            Event::Frame(id, body[..n].to_vec())
        };
        if events.send(event).is_err() {
            break Ok(());
        }
    };
    let _ = stream.shutdown(Shutdown::Both);
    // The sim side drops its sender on Closed, which ends the writer.
    drop(writer);
    result
}

fn ticks_per(dt: f64, rate_hz: f64) -> u64 {
    ((1.0 / (rate_hz * dt)).round() as u64).max(1)
}

fn sim_loop(
    cfg: &ScenarioConfig,
    opts: &ServeOptions,
    events: Receiver<Event>,
) -> Result<(TrialLog, u64, u64, u64)> {
    let mut sim = Simulation::new(cfg.clone())?;
    let cfg = sim.config().clone();
    let mut session = TeleopSession::new(cfg.teleop, cfg.latency, cfg.seed);
    let mut telemetry_link = Link::<Vec<u8>>::established(cfg.latency, cfg.seed.wrapping_add(2));
    let mut current: Option<(u64, Sender<Vec<u8>>)> = None;
    let telemetry_every = ticks_per(cfg.dt, cfg.teleop.telemetry_rate);
    let max_ticks = opts.max_time.map(|m| (m / cfg.dt).ceil() as u64);
    let paced = opts.time_scale.is_finite() && opts.time_scale > 0.0;
    let start = Instant::now();
    let mut seq = 0u16;
    let mut sent = 0u64;
    let mut goal_reached = false;

    let status = loop {
        if opts.stop.load(Ordering::SeqCst) || max_ticks.is_some_and(|m| sim.tick() >= m) {
            break if goal_reached {
                TrialStatus::Finished
            } else {
                TrialStatus::Timeout
            };
        }
        let t = sim.time();
        loop {
            match events.try_recv() {
                Ok(Event::Open(id, tx)) => {
                    if session.open(t).is_ok() {
                        current = Some((id, tx));
                    }
                }
                Ok(Event::Frame(id, bytes)) if current.as_ref().is_some_and(|c| c.0 == id) => {
                    session.receive(&bytes, t);
                }
                Ok(Event::Malformed(id)) if current.as_ref().is_some_and(|c| c.0 == id) => {
                    session.record_malformed();
                }
                Ok(Event::Closed(id)) if current.as_ref().is_some_and(|c| c.0 == id) => {
                    session.close();
                    current = None;
                }
                Ok(_) => {}
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
            }
        }
        let cmd = session.poll(t);
        if let Err(e) = sim.advance(cmd) {
            break TrialStatus::Diverged {
                tick: sim.tick() + 1,
                reason: e.to_string(),
            };
        }
        if sim.goal_reached() && !goal_reached {
            goal_reached = true;
            if opts.stop_at_goal {
                break TrialStatus::Finished;
            }
        }

        let now = sim.time();
        if let Some((_, tx)) = &current {
            if session.state() == SessionState::Active && sim.tick() % telemetry_every == 0 {
                let bytes = TelemetryFrame::quantize(seq, &sim.snapshot()).encode().to_vec();
                seq = seq.wrapping_add(1);
                if cfg.teleop.delay_telemetry {
                    telemetry_link.enqueue(bytes, now);
                } else {
                    let _ = tx.send(bytes);
                    sent += 1;
                }
            }
            if cfg.teleop.delay_telemetry {
                for bytes in telemetry_link.poll(now) {
                    let _ = tx.send(bytes);
                    sent += 1;
                }
            }
        }

        if paced {
            let due = start + Duration::from_secs_f64(now / opts.time_scale);
            let wall = Instant::now();
            if due > wall {
                thread::sleep(due - wall);
            }
        }
    };
    let malformed = session.malformed();
    let sessions = session.sessions();
    Ok((sim.into_log(status), malformed, sessions, sent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teleop::{CommandFrame, LatencyProfile, TELEMETRY_LEN};
    use crate::vehicle::Buttons;

    fn client(addr: SocketAddr) -> TcpStream {
        let mut s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        s.write_all(&HELLO).unwrap();
        let mut echo = [0u8; 4];
        s.read_exact(&mut echo).unwrap();
        assert_eq!(echo, HELLO);
        s
    }

    fn send(s: &mut TcpStream, bytes: &[u8]) {
        s.write_all(&[bytes.len() as u8]).unwrap();
        s.write_all(bytes).unwrap();
    }

    fn read_telemetry(s: &mut TcpStream) -> TelemetryFrame {
        let mut len = [0u8; 1];
        s.read_exact(&mut len).unwrap();
        assert_eq!(len[0] as usize, TELEMETRY_LEN);
        let mut buf = [0u8; TELEMETRY_LEN];
        s.read_exact(&mut buf).unwrap();
        TelemetryFrame::decode(&buf).unwrap()
    }

    fn fast_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            latency: LatencyProfile {
                startup: [0.5, 0.5],
                nav: [0.2, 0.2],
                loss: 0.0,
            },
            ..ScenarioConfig::default()
        };
        cfg.source = crate::scenario::SourceKind::Live;
        cfg
    }

    #[test]
    fn operator_drives_vehicle_and_sees_telemetry() {
        let server = Server::bind(([127, 0, 0, 1], 0)).unwrap();
        let addr = server.local_addr();
        let opts = ServeOptions {
            time_scale: 20.0,
            max_time: Some(8.0),
            ..ServeOptions::default()
        };
        let stop = opts.stop.clone();
        let cfg = fast_cfg();
        let handle = thread::spawn(move || server.run(&cfg, &opts).unwrap());

        let mut s = client(addr);
        for k in 0..30u16 {
            send(&mut s, &CommandFrame::new(k, Buttons::FWD).encode());
        }
        send(&mut s, b"\xA7\x01junk");
        let mut surge = Vec::new();
        for _ in 0..20 {
            surge.push(read_telemetry(&mut s).surge_mm_s);
        }
        // The junk frame is counted even if it raced telemetry.
        thread::sleep(Duration::from_millis(100));
        drop(s);
        stop.store(true, Ordering::SeqCst);
        let report = handle.join().unwrap();
        assert!(surge.last().unwrap() > surge.first().unwrap(), "{surge:?}");
        assert_eq!(report.malformed, 1);
        assert_eq!(report.sessions, 1);
        assert!(report.log.records.iter().any(|r| r.cmd == Buttons::FWD.bits()));
    }

    #[test]
    fn second_operator_is_turned_away_and_disconnect_neutralizes() {
        let server = Server::bind(([127, 0, 0, 1], 0)).unwrap();
        let addr = server.local_addr();
        let opts = ServeOptions {
            time_scale: 20.0,
            max_time: Some(30.0),
            ..ServeOptions::default()
        };
        let stop = opts.stop.clone();
        let cfg = fast_cfg();
        let handle = thread::spawn(move || server.run(&cfg, &opts).unwrap());

        let mut first = client(addr);
        send(&mut first, &CommandFrame::new(0, Buttons::FWD).encode());
        read_telemetry(&mut first);

        let mut second = TcpStream::connect(addr).unwrap();
        second.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        let _ = second.write_all(&HELLO);
        let mut buf = [0u8; 4];
        assert!(matches!(second.read(&mut buf), Ok(0) | Err(_)));

        drop(first);
        thread::sleep(Duration::from_millis(300));
        stop.store(true, Ordering::SeqCst);
        let report = handle.join().unwrap();
        assert_eq!(report.rejected, 1);
        assert_eq!(report.log.records.last().unwrap().cmd, 0);
    }

    #[test]
    fn busy_port_is_an_error() {
        let a = Server::bind(([127, 0, 0, 1], 0)).unwrap();
        let err = Server::bind(a.local_addr()).unwrap_err();
        assert!(matches!(err, Error::Bind { .. }), "{err}");
    }
}
