use crate::teleop::frame::CommandFrame;
use crate::teleop::link::{Link, Scheduled};
use crate::teleop::TeleopConfig;
use crate::teleop::LatencyProfile;
use crate::vehicle::Buttons;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Listening,
    /// Operator connected; waiting out the startup delay.
    Handshake,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionBusy;

/// Transport-independent operator session: owns the command link, the
/// watchdog, and the command currently applied to the vehicle.
#[derive(Debug, Clone)]
pub struct TeleopSession {
    cfg: TeleopConfig,
    state: SessionState,
    link: Link<CommandFrame>,
    command: Buttons,
    last_delivery: f64,
    malformed: u64,
    sessions: u64,
}

impl TeleopSession {
    pub fn new(cfg: TeleopConfig, profile: LatencyProfile, seed: u64) -> Self {
        Self {
            cfg,
            state: SessionState::Listening,
            link: Link::new(profile, seed),
            command: Buttons::empty(),
            last_delivery: 0.0,
            malformed: 0,
            sessions: 0,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn command(&self) -> Buttons {
        self.command
    }

    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    pub fn sessions(&self) -> u64 {
        self.sessions
    }

    pub fn link(&self) -> &Link<CommandFrame> {
        &self.link
    }

    /// Operator completed the hello exchange.
    pub fn open(&mut self, _now: f64) -> Result<(), SessionBusy> {
        if self.state != SessionState::Listening {
            return Err(SessionBusy);
        }
        self.link.open();
        self.state = SessionState::Handshake;
        self.command = Buttons::empty();
        self.sessions += 1;
        Ok(())
    }

    /// Operator went away: back to listening, vehicle neutral.
    pub fn close(&mut self) {
        self.link.open();
        self.state = SessionState::Listening;
        self.command = Buttons::empty();
    }

    /// One frame's bytes from the transport. Malformed frames are counted and dropped.
    pub fn receive(&mut self, bytes: &[u8], now: f64) -> Option<Scheduled> {
        if self.state == SessionState::Listening {
            return None;
        }
        match CommandFrame::decode(bytes) {
            Ok(frame) if bytes.len() == crate::teleop::COMMAND_LEN => Some(self.link.enqueue(frame, now)),
            _ => {
                self.malformed += 1;
                None
            }
        }
    }

    /// Counts a transport-level framing error.
    pub fn record_malformed(&mut self) {
        self.malformed += 1;
    }

    /// Applies deliveries due at `now` and returns the command to hold this tick.
    pub fn poll(&mut self, now: f64) -> Buttons {
        if self.state == SessionState::Listening {
            return self.command;
        }
        if let Some(last) = self.link.poll(now).last() {
            self.command = last.buttons;
            self.last_delivery = now;
            self.state = SessionState::Active;
        }
        if self.state == SessionState::Active && now - self.last_delivery > self.cfg.watchdog {
            self.command = Buttons::empty();
        }
        self.command
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixed() -> LatencyProfile {
        LatencyProfile {
            startup: [7.0, 7.0],
            nav: [2.5, 2.5],
            loss: 0.0,
        }
    }

    fn frame(seq: u16, b: Buttons) -> [u8; 6] {
        CommandFrame::new(seq, b).encode()
    }

    #[test]
    fn lifecycle() {
        let mut s = TeleopSession::new(TeleopConfig::default(), fixed(), 0);
        assert_eq!(s.state(), SessionState::Listening);
        s.open(0.0).unwrap();
        assert_eq!(s.open(0.0), Err(SessionBusy));
        assert_eq!(s.state(), SessionState::Handshake);
        s.receive(&frame(0, Buttons::FWD), 0.0);
        assert_eq!(s.poll(6.9), Buttons::empty());
        assert_eq!(s.state(), SessionState::Handshake);
        assert_eq!(s.poll(7.0), Buttons::FWD);
        assert_eq!(s.state(), SessionState::Active);

        s.close();
        assert_eq!(s.state(), SessionState::Listening);
        assert_eq!(s.poll(7.01), Buttons::empty());
        assert!(s.open(8.0).is_ok());
        assert_eq!(s.sessions(), 2);
    }

    #[test]
    fn garbage_is_counted_not_fatal() {
        let mut s = TeleopSession::new(TeleopConfig::default(), fixed(), 0);
        s.open(0.0).unwrap();
        s.receive(&frame(0, Buttons::FWD), 0.0);
        s.poll(7.0);
        s.receive(b"garbage", 7.1);
        s.receive(&[0xA7, 0x01, 0, 0, 0b11, 0], 7.2);
        assert_eq!(s.malformed(), 2);
        assert_eq!(s.state(), SessionState::Active);
        assert_eq!(s.poll(7.3), Buttons::FWD);
    }

    #[test]
    fn watchdog_neutralizes() {
        let mut s = TeleopSession::new(TeleopConfig::default(), fixed(), 0);
        s.open(0.0).unwrap();
        s.receive(&frame(0, Buttons::FWD), 0.0);
        assert_eq!(s.poll(7.0), Buttons::FWD);
        assert_eq!(s.poll(12.0), Buttons::FWD);
        assert_eq!(s.poll(12.01), Buttons::empty());
    }

    #[test]
    fn frames_ignored_while_listening() {
        let mut s = TeleopSession::new(TeleopConfig::default(), fixed(), 0);
        assert!(s.receive(&frame(0, Buttons::FWD), 0.0).is_none());
        assert_eq!(s.poll(100.0), Buttons::empty());
    }
}
