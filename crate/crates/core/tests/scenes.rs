use std::time::Instant;

use viewplan_core::sim::{certify, generate_scene, CameraIntrinsics, Difficulty};

#[test]
fn medium_scenes_certify() {
    let k = CameraIntrinsics::default();
    let t = Instant::now();
    for seed in 100..120 {
        let s = generate_scene(seed, Difficulty::Medium).unwrap();
        let c = certify(&s, &k);
        eprintln!("seed {seed}: {}/{} succeed", c.n_success, c.n_candidates);
        assert!(c.n_success >= 1);
        assert!(c.failing_share() >= 0.2);
    }
    eprintln!("elapsed {:?}", t.elapsed());
}
