use std::net::{Ipv4Addr, SocketAddr, TcpStream};

use base64::Engine;
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

use viewplan_cli::teleop::{ClientMessage, ServerMessage, SessionState, TeleopServer};
use viewplan_core::dataset::{compute_stats, iterate_samples, load_demo, DemoSource};
use viewplan_core::expert::{demonstrate, sample_occluded_starts, ExpertConfig};
use viewplan_core::sim::scene::generate_scene_with;
use viewplan_core::sim::{CameraIntrinsics, Difficulty};
use viewplan_policy::{train, ModelConfig, TrainConfig};

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn recv(ws: &mut Client) -> ServerMessage {
    match ws.read().unwrap() {
        Message::Text(t) => serde_json::from_str(&t).unwrap(),
        other => panic!("unexpected {other:?}"),
    }
}

fn call(ws: &mut Client, m: &ClientMessage) -> ServerMessage {
    ws.send(Message::text(serde_json::to_string(m).unwrap()))
        .unwrap();
    recv(ws)
}

fn frame(m: ServerMessage) -> (usize, bool, [f64; 7], String) {
    match m {
        ServerMessage::Frame {
            step,
            success,
            pose,
            rgb_png_base64,
            ..
        } => (step, success, pose, rgb_png_base64),
        other => panic!("expected a frame, got {other:?}"),
    }
}

#[test]
fn headless_client_records_a_trainable_demo() {
    let k = CameraIntrinsics::with_hfov(16, 16, 60f64.to_radians());
    let scene = generate_scene_with(21, Difficulty::Easy, &k).unwrap();
    let start = sample_occluded_starts(&scene, 1, 3, scene.shell, &k).unwrap()[0];
    let out = tempfile::tempdir().unwrap();
    let mut server = TeleopServer::bind(
        SocketAddr::from((Ipv4Addr::LOCALHOST, 0)),
        scene.clone(),
        k,
        start,
        out.path(),
    )
    .unwrap();
    let addr = server.local_addr().unwrap();
    let handle = std::thread::spawn(move || server.serve_one().unwrap());

    let (mut ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
    match recv(&mut ws) {
        ServerMessage::Hello {
            scene_id,
            max_steps,
            intrinsics,
            ..
        } => {
            assert_eq!(scene_id, scene.scene_id);
            assert_eq!(max_steps, 50);
            assert_eq!(intrinsics, k);
        }
        other => panic!("expected hello, got {other:?}"),
    }
    let (step, success, pose0, png) = frame(recv(&mut ws));
    assert_eq!((step, success), (1, false));
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(png)
        .unwrap();
    let info = png::Decoder::new(bytes.as_slice())
        .read_info()
        .unwrap()
        .info()
        .clone();
    assert_eq!((info.width, info.height), (16, 16));

    let (step, _, pose, _) = frame(call(&mut ws, &ClientMessage::Action { delta: [0.0; 6] }));
    assert_eq!((step, pose), (2, pose0));
    assert!(matches!(
        call(&mut ws, &ClientMessage::Save),
        ServerMessage::Rejected { .. }
    ));
    ws.send(Message::text("{\"type\": \"teleport\"}")).unwrap();
    assert!(matches!(recv(&mut ws), ServerMessage::Rejected { .. }));
    let (step, _, pose, _) = frame(call(&mut ws, &ClientMessage::Reset));
    assert_eq!((step, pose), (1, pose0));

    // Play back what the scripted expert would press.
    let expert = demonstrate(
        &scene,
        &start,
        &ExpertConfig {
            steps: 10,
            ..Default::default()
        },
        &k,
        0,
    )
    .unwrap();
    let mut counter = 1;
    let mut last_success = false;
    for s in &expert.steps[..expert.steps.len() - 1] {
        let (step, success, _, _) = frame(call(
            &mut ws,
            &ClientMessage::Action {
                delta: s.action.to_array(),
            },
        ));
        counter += 1;
        assert_eq!(step, counter);
        last_success = success;
    }
    assert!(last_success);
    let (path, n_steps) = match call(&mut ws, &ClientMessage::Save) {
        ServerMessage::Saved { path, n_steps, .. } => (path, n_steps),
        other => panic!("expected saved, got {other:?}"),
    };
    assert_eq!(n_steps, counter);
    assert!(matches!(
        call(&mut ws, &ClientMessage::Action { delta: [0.0; 6] }),
        ServerMessage::Rejected { .. }
    ));
    ws.close(None).unwrap();
    while ws.read().is_ok() {}
    assert_eq!(handle.join().unwrap(), SessionState::Saved);

    let demo = load_demo(&path).unwrap();
    assert_eq!(demo.source, DemoSource::Human);
    assert_eq!(demo.steps.len(), counter);
    demo.validate(&scene, 0.95).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["n_steps"], counter);
    assert_eq!(manifest["source"], "human");

    let demos = vec![demo];
    let stats = compute_stats(&demos).unwrap();
    assert_eq!(
        iterate_samples(&demos, 3, &stats, 0).unwrap().count(),
        counter
    );
    let model = ModelConfig {
        image_size: [16, 16],
        ..ModelConfig::tiny()
    };
    let ckpt = train(
        &demos,
        &stats,
        model,
        TrainConfig {
            epochs: 1,
            ..Default::default()
        },
        None,
        |_| {},
    )
    .unwrap();
    assert_eq!(ckpt.epoch, 1);
}
