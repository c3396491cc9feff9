//! Websocket bridge for human demonstrations: JSON text frames, one frame
//! pushed per action or reset.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use viewplan_core::dataset::{
    demonstration_from_trajectory, encode_png, save_demo, DemoSource, MAX_EPISODE_STEPS,
};
use viewplan_core::episode::{MAX_ROTATION_STEP, MAX_TRANSLATION_STEP};
use viewplan_core::se3::compose;
use viewplan_core::sim::scene::fnv1a;
use viewplan_core::sim::{render, visibility, CameraIntrinsics, Scene, DEFAULT_TAU_V};
use viewplan_core::{Pose, PoseDelta, Trajectory};
use viewplan_policy::controller::clip_action;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMessage {
    Action { delta: [f64; 6] },
    Reset,
    Save,
    Discard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Hello {
        session_id: u64,
        scene_id: String,
        intrinsics: CameraIntrinsics,
        max_steps: usize,
        max_translation_step: f64,
        max_rotation_step: f64,
    },
    /// `step` counts the observations recorded so far, the current one included.
    Frame {
        step: usize,
        rgb_png_base64: String,
        visibility: f64,
        in_frame: bool,
        success: bool,
        pose: [f64; 7],
    },
    Saved {
        path: PathBuf,
        demo_id: String,
        n_steps: usize,
    },
    Rejected {
        reason: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Live,
    Saved,
    Discarded,
}

/// Recording state of one teleoperation session, independent of the socket.
pub struct TeleopSession {
    pub session_id: u64,
    pub scene: Scene,
    pub intrinsics: CameraIntrinsics,
    pub start: Pose,
    pub out: PathBuf,
    poses: Vec<Pose>,
    state: SessionState,
}

fn rejected(reason: impl Into<String>) -> ServerMessage {
    ServerMessage::Rejected {
        reason: reason.into(),
    }
}

impl TeleopSession {
    pub fn new(
        session_id: u64,
        scene: Scene,
        intrinsics: CameraIntrinsics,
        start: Pose,
        out: &Path,
    ) -> Self {
        let start = start.quantize_f32();
        Self {
            session_id,
            scene,
            intrinsics,
            start,
            out: out.to_path_buf(),
            poses: vec![start],
            state: SessionState::Live,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.poses.len()
    }

    pub fn pose(&self) -> &Pose {
        self.poses
            .last()
            .expect("recording starts with the start pose")
    }

    pub fn hello(&self) -> ServerMessage {
        ServerMessage::Hello {
            session_id: self.session_id,
            scene_id: self.scene.scene_id.clone(),
            intrinsics: self.intrinsics,
            max_steps: MAX_EPISODE_STEPS,
            max_translation_step: MAX_TRANSLATION_STEP,
            max_rotation_step: MAX_ROTATION_STEP,
        }
    }

    pub fn frame(&self) -> Result<ServerMessage> {
        let pose = self.pose();
        let k = &self.intrinsics;
        let f = render(&self.scene, pose, k, true);
        let png = encode_png(k.width, k.height, &f.rgb)?;
        let v = visibility(&self.scene, pose, k);
        Ok(ServerMessage::Frame {
            step: self.steps(),
            rgb_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
            visibility: v.visibility_fraction,
            in_frame: v.in_frame,
            success: v.is_success(DEFAULT_TAU_V),
            pose: pose.to_array(),
        })
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<ServerMessage> {
        match msg {
            ClientMessage::Reset => {
                self.poses = vec![self.start];
                self.state = SessionState::Live;
                self.frame()
            }
            _ if self.state != SessionState::Live => Ok(rejected(
                format!("session is {:?}; send reset to start again", self.state).to_lowercase(),
            )),
            ClientMessage::Discard => {
                self.state = SessionState::Discarded;
                Ok(rejected("recording discarded"))
            }
            ClientMessage::Action { delta } => {
                if !delta.iter().all(|v| v.is_finite()) {
                    return Ok(rejected("action has non-finite components"));
                }
                if self.steps() >= MAX_EPISODE_STEPS {
                    return Ok(rejected(format!("step limit {MAX_EPISODE_STEPS} reached")));
                }
                let (d, _) = clip_action(&PoseDelta::from_array(delta));
                let next = compose(self.pose(), &d)?.quantize_f32();
                if !self.scene.workspace_bounds.contains(next.position) {
                    return Ok(rejected("action leaves the workspace"));
                }
                self.poses.push(next);
                self.frame()
            }
            ClientMessage::Save => self.save(),
        }
    }

    fn save(&mut self) -> Result<ServerMessage> {
        let bytes: Vec<u8> = self
            .poses
            .iter()
            .flat_map(|p| p.to_le_bytes())
            .chain(self.session_id.to_le_bytes())
            .collect();
        let demo_id = format!("{}-human-{:016x}", self.scene.scene_id, fnv1a(&bytes));
        let traj = Trajectory::from_steps(self.poses.clone())?;
        let demo = demonstration_from_trajectory(
            demo_id.clone(),
            &self.scene,
            DemoSource::Human,
            traj,
            &self.intrinsics,
        )?;
        if let Err(e) = demo.validate(&self.scene, DEFAULT_TAU_V) {
            return Ok(rejected(e.to_string()));
        }
        let path = save_demo(&demo, &self.scene, &self.out)?;
        self.state = SessionState::Saved;
        Ok(ServerMessage::Saved {
            path,
            demo_id,
            n_steps: demo.steps.len(),
        })
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> Result<()> {
    ws.send(Message::text(serde_json::to_string(msg)?))?;
    Ok(())
}

/// Serves one connection at a time; each connection is a fresh session.
pub struct TeleopServer {
    listener: TcpListener,
    scene: Scene,
    intrinsics: CameraIntrinsics,
    start: Pose,
    out: PathBuf,
    sessions: u64,
}

impl TeleopServer {
    pub fn bind(
        addr: SocketAddr,
        scene: Scene,
        intrinsics: CameraIntrinsics,
        start: Pose,
        out: &Path,
    ) -> Result<Self> {
        let listener = TcpListener::bind(addr)
            .map_err(|e| CliError::Usage(format!("cannot listen on {addr}: {e}")))?;
        Ok(Self {
            listener,
            scene,
            intrinsics,
            start,
            out: out.to_path_buf(),
            sessions: 0,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener
            .local_addr()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Accepts one client and runs its session until the socket closes.
    pub fn serve_one(&mut self) -> Result<SessionState> {
        let (stream, peer) = self
            .listener
            .accept()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let mut ws = tungstenite::accept(stream)
            .map_err(|e| CliError::Usage(format!("handshake with {peer}: {e}")))?;
        self.sessions += 1;
        let mut session = TeleopSession::new(
            self.sessions,
            self.scene.clone(),
            self.intrinsics,
            self.start,
            &self.out,
        );
        log::info!("session {} from {peer}", session.session_id);
        send(&mut ws, &session.hello())?;
        send(&mut ws, &session.frame()?)?;
        loop {
            let msg = match ws.read() {
                Ok(m) => m,
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    break
                }
                Err(tungstenite::Error::Protocol(_)) => break,
                Err(e) => return Err(e.into()),
            };
            let reply = match msg {
                Message::Text(t) => match serde_json::from_str::<ClientMessage>(&t) {
                    Ok(m) => session.handle(m)?,
                    Err(e) => rejected(format!("malformed message: {e}")),
                },
                Message::Close(_) => break,
                _ => continue,
            };
            send(&mut ws, &reply)?;
        }
        Ok(session.state())
    }

    pub fn serve_forever(&mut self) -> Result<()> {
        loop {
            let state = self.serve_one()?;
            log::info!("session {} ended {:?}", self.sessions, state);
        }
    }
}
