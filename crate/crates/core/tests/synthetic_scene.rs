use wmd::data::{ActionClass, SegmentSpec, SyntheticScene, SyntheticSceneConfig};
use wmd::encoder::{encode_dif, RoiSpec};
use wmd::masks::{frame_mask, MaskConfig};

fn clean(size: u32, script: Vec<SegmentSpec>) -> SyntheticScene {
    let cfg = SyntheticSceneConfig { size, noise_level: 0.0, script: Some(script), ..Default::default() };
    SyntheticScene::new(cfg, 17).unwrap()
}

#[test]
fn depth_masks_recover_rendered_legs() {
    use ActionClass::*;
    let script = [Stop, Walk, TurnRight, Walk, TurnLeft]
        .iter()
        .map(|&class| SegmentSpec { class, seconds: 1.0 })
        .collect();
    let scene = clean(160, script);
    let cfg = MaskConfig::default();
    for i in (0..scene.frame_count()).step_by(5) {
        let (_, depth, legs) = scene.render_clean(i);
        let m = frame_mask(&depth, &cfg);
        assert!(!m.corrupted, "frame {i}");
        assert_eq!(m.mask.data, legs, "frame {i}");
    }
}

#[test]
fn dif_responds_exactly_where_pixels_changed() {
    let scene = clean(96, vec![SegmentSpec { class: ActionClass::Walk, seconds: 3.0 }]);
    let frames: Vec<_> = (0..8).map(|i| scene.render(i * 2)).collect();
    let window: Vec<_> = frames[2..6].iter().collect();
    let img = encode_dif(&window, RoiSpec::full(96, 96)).unwrap();
    let (first, last) = (&window[0].rgb, &window[3].rgb);
    for (i, (a, b)) in first.pixels().zip(last.pixels()).enumerate() {
        for ch in 0..3 {
            let changed = a.0[ch] != b.0[ch];
            assert_eq!(img.data[i * 3 + ch] != 0.5, changed);
        }
    }
}

#[test]
fn dif_is_confined_to_legs_over_a_static_background() {
    let mut cfg = SyntheticSceneConfig {
        size: 96,
        noise_level: 0.0,
        script: Some(vec![SegmentSpec { class: ActionClass::Walk, seconds: 3.0 }]),
        ..Default::default()
    };
    cfg.geometry.flow_per_m = 0.0;
    let scene = SyntheticScene::new(cfg, 5).unwrap();
    let frames: Vec<_> = (0..4).map(|i| scene.render(i * 2 + 1)).collect();
    let window: Vec<_> = frames.iter().collect();
    let img = encode_dif(&window, RoiSpec::full(96, 96)).unwrap();
    let legs_first = scene.leg_mask(frames[0].timestamp);
    let legs_last = scene.leg_mask(frames[3].timestamp);
    let mut moving = 0;
    for i in 0..96 * 96 {
        let responds = (0..3).any(|ch| img.data[i * 3 + ch] != 0.5);
        if responds {
            moving += 1;
            assert!(legs_first[i] || legs_last[i]);
        }
    }
    assert!(moving > 0);
}
