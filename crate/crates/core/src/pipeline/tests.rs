use super::*;
use crate::pose::{euler_to_matrix, geodesic_distance};
use crate::synthgen::{default_model, render_omni, SyntheticScene};

fn scene() -> SyntheticScene {
    SyntheticScene::for_model(&default_model(), 11)
}

fn deg(d: f64) -> f64 {
    d.to_radians()
}

#[test]
fn identical_frames_give_identity() {
    let model = default_model();
    let f = render_omni(&scene(), &model, &euler_to_matrix(0.1, 0.0, 0.3));
    let (pose, diag) = run_pair(&f, &f, &model, &PipelineConfig::default()).unwrap();
    assert!(diag.failure.is_none());
    assert!(geodesic_distance(&pose.rotation, &Rotation3::identity()) < 1e-6);
    assert_eq!(diag.tiles, 20);
}

#[test]
fn pure_yaw_pair() {
    let model = default_model();
    let s = scene();
    let f1 = render_omni(&s, &model, &Rotation3::identity());
    let truth = euler_to_matrix(0.0, 0.0, deg(2.0));
    let f2 = render_omni(&s, &model, &truth);
    let (pose, diag) = run_pair(&f1, &f2, &model, &PipelineConfig::default()).unwrap();
    let (r, p, y) = crate::pose::rotation_to_euler(&pose.rotation);
    assert!((y - deg(2.0)).abs() <= deg(0.2), "yaw {} {diag:?}", y.to_degrees());
    assert!(r.abs() <= deg(0.2) && p.abs() <= deg(0.2), "{} {}", r.to_degrees(), p.to_degrees());
}

#[test]
fn general_rotation_pair() {
    let model = default_model();
    let s = scene();
    let f1 = render_omni(&s, &model, &Rotation3::identity());
    let truth = euler_to_matrix(deg(1.0), deg(1.5), deg(2.0));
    let f2 = render_omni(&s, &model, &truth);
    let (pose, diag) = run_pair(&f1, &f2, &model, &PipelineConfig::default()).unwrap();
    let err = geodesic_distance(&pose.rotation, &truth);
    assert!(err <= deg(0.3), "error {} deg, {diag:?}", err.to_degrees());
}

#[test]
fn mismatched_frame_is_an_error() {
    let model = default_model();
    let f = Image::filled(64, 64, 0.5);
    assert!(matches!(
        run_pair(&f, &f, &model, &PipelineConfig::default()),
        Err(PipelineError::FrameSize { .. })
    ));
}

#[test]
fn featureless_pair_falls_back_to_identity() {
    let model = default_model();
    let (w, h) = model.image_size();
    let f = Image::filled(w, h, 0.5);
    let (pose, diag) = run_pair(&f, &f, &model, &PipelineConfig::default()).unwrap();
    assert!(diag.failure.is_some());
    assert_eq!(pose.rotation, Rotation3::identity());
}
