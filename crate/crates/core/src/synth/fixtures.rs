//! Parametric fixture objects. Each takes a seed that drives feature
//! signatures and noise; geometry is fixed.

use super::{CameraLayout, CameraRig, Pose, Primitive, Shape, SynthPart, SynthSpec};

fn cyl(r: f64, hh: f64, x: f64, y: f64, z: f64) -> Primitive {
    Primitive { shape: Shape::Cylinder { radius: r, half_height: hh }, pose: Pose::at(x, y, z) }
}

fn cuboid(half: [f64; 3], x: f64, y: f64, z: f64) -> Primitive {
    Primitive { shape: Shape::Box { half_extents: half }, pose: Pose::at(x, y, z) }
}

fn part(name: &str, prims: Vec<Primitive>, link: u32, color: [u8; 3], instruction: Option<&str>) -> SynthPart {
    SynthPart { name: name.into(), primitives: prims, link_id: link, signature: None, color, instruction: instruction.map(Into::into) }
}

/// A 1 m cube seen head-on by a single camera 3 m away on the +x axis.
pub fn unit_box_frontal() -> SynthSpec {
    let mut s = SynthSpec::new("unit-box", "box", vec![part("box", vec![cuboid([0.5; 3], 0.0, 0.0, 0.0)], 0, [200, 200, 200], None)]);
    s.cameras = CameraRig {
        count: 1,
        radius: 3.0,
        min_elevation_deg: 0.0,
        max_elevation_deg: 0.0,
        layout: CameraLayout::Ring,
        fov_deg: 40.0,
        target: [0.0; 3],
        min_azimuth_deg: 0.0,
        max_azimuth_deg: 0.0,
    };
    s.width = 21;
    s.height = 21;
    s
}

/// Two adjacent slabs with distinct signatures.
pub fn two_part_slab(noise: f64, views: usize) -> SynthSpec {
    let mut s = SynthSpec::new(
        "slab",
        "slab",
        vec![
            part("left", vec![cuboid([0.1, 0.05, 0.02], 0.0, -0.05, 0.0)], 0, [220, 60, 60], Some("press the left pad")),
            part("right", vec![cuboid([0.1, 0.05, 0.02], 0.0, 0.05, 0.0)], 0, [60, 60, 220], Some("press the right pad")),
        ],
    );
    s.noise = noise;
    s.cameras = CameraRig { count: views, radius: 0.5, min_elevation_deg: 35.0, max_elevation_deg: 75.0, ..CameraRig::default() };
    s.width = 32;
    s.height = 32;
    s
}

/// Mug: body, base, decorative band, rim and a three-bar handle.
pub fn mug(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(
        "mug",
        "mug",
        vec![
            part("body", vec![cyl(0.04, 0.035, 0.0, 0.0, 0.045)], 0, [235, 235, 225], None),
            part("base", vec![cyl(0.042, 0.006, 0.0, 0.0, 0.006)], 0, [120, 90, 60], Some("set the mug down on its base")),
            part("band", vec![cyl(0.0415, 0.008, 0.0, 0.0, 0.05)], 0, [40, 120, 200], None),
            part("rim", vec![cyl(0.042, 0.007, 0.0, 0.0, 0.087)], 0, [200, 60, 60], Some("drink from the rim of the mug")),
            part(
                "handle",
                vec![
                    cuboid([0.014, 0.008, 0.007], 0.052, 0.0, 0.072),
                    cuboid([0.007, 0.008, 0.033], 0.066, 0.0, 0.046),
                    cuboid([0.014, 0.008, 0.007], 0.052, 0.0, 0.02),
                ],
                0,
                [60, 180, 75],
                Some("grasp the handle of the mug"),
            ),
        ],
    );
    s.cameras.radius = 0.25;
    s.cameras.target = [0.015, 0.0, 0.047];
    s.canonical_direction = [0.3, -1.0, 0.6];
    s.seed = seed;
    s
}

/// Cabinet with two drawers, each its own link carrying a knob.
pub fn cabinet(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(
        "cabinet",
        "cabinet",
        vec![
            part("carcass", vec![cuboid([0.2, 0.15, 0.25], 0.0, 0.0, 0.25)], 0, [150, 110, 70], None),
            part("top_drawer", vec![cuboid([0.012, 0.13, 0.1], 0.21, 0.0, 0.36)], 1, [200, 170, 120], Some("push the top drawer closed")),
            part(
                "top_knob",
                vec![cuboid([0.02, 0.04, 0.025], 0.24, 0.0, 0.36)],
                1,
                [40, 40, 40],
                Some("pull the top drawer open by its knob"),
            ),
            part("bottom_drawer", vec![cuboid([0.012, 0.13, 0.1], 0.21, 0.0, 0.13)], 2, [190, 160, 110], None),
            part(
                "bottom_knob",
                vec![cuboid([0.02, 0.04, 0.025], 0.24, 0.0, 0.13)],
                2,
                [60, 60, 60],
                Some("pull the bottom drawer open by its knob"),
            ),
        ],
    );
    s.cameras = CameraRig {
        radius: 1.0,
        target: [0.1, 0.0, 0.25],
        min_azimuth_deg: -70.0,
        max_azimuth_deg: 70.0,
        min_elevation_deg: 5.0,
        max_elevation_deg: 50.0,
        ..CameraRig::default()
    };
    s.canonical_direction = [1.0, -0.3, 0.3];
    s.seed = seed;
    s
}

/// Bottle: body, label, neck and cap.
pub fn bottle(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(
        "bottle",
        "bottle",
        vec![
            part("body", vec![cyl(0.035, 0.05, 0.0, 0.0, 0.05)], 0, [90, 160, 90], None),
            part("label", vec![cyl(0.0355, 0.02, 0.0, 0.0, 0.055)], 0, [240, 240, 240], Some("read the label on the bottle")),
            part("neck", vec![cyl(0.018, 0.022, 0.0, 0.0, 0.12)], 0, [80, 150, 80], Some("hold the bottle by its neck")),
            part("cap", vec![cyl(0.02, 0.01, 0.0, 0.0, 0.15)], 0, [220, 40, 40], Some("twist off the cap")),
        ],
    );
    s.cameras.radius = 0.3;
    s.cameras.target = [0.0, 0.0, 0.08];
    s.seed = seed;
    s
}

/// Hammer lying on its side: handle, head and claw.
pub fn hammer(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(
        "hammer",
        "hammer",
        vec![
            part("handle", vec![cuboid([0.1, 0.012, 0.01], -0.02, 0.0, 0.01)], 0, [170, 120, 60], Some("swing the hammer by its handle")),
            part(
                "head",
                vec![cuboid([0.02, 0.03, 0.016], 0.1, 0.028, 0.016)],
                0,
                [110, 110, 120],
                Some("strike the nail with the hammer head"),
            ),
            part("claw", vec![cuboid([0.016, 0.03, 0.012], 0.1, -0.028, 0.012)], 0, [60, 60, 70], Some("pull out a nail with the claw")),
        ],
    );
    s.cameras.radius = 0.35;
    s.cameras.min_elevation_deg = 30.0;
    s.cameras.max_elevation_deg = 75.0;
    s.cameras.target = [0.02, 0.0, 0.01];
    s.seed = seed;
    s
}

/// Kettle: round body, lid, spout and top handle.
pub fn kettle(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(
        "kettle",
        "kettle",
        vec![
            part(
                "body",
                vec![Primitive { shape: Shape::Sphere { radius: 0.07 }, pose: Pose::at(0.0, 0.0, 0.07) }],
                0,
                [200, 200, 210],
                None,
            ),
            part("lid", vec![cyl(0.035, 0.008, 0.0, 0.0, 0.138)], 0, [50, 50, 60], Some("lift the lid of the kettle")),
            part(
                "spout",
                vec![Primitive {
                    shape: Shape::Cylinder { radius: 0.012, half_height: 0.035 },
                    pose: Pose { translation: [0.085, 0.0, 0.09], rotation: [0.0, 0.9, 0.0] },
                }],
                0,
                [160, 160, 170],
                Some("pour water out of the spout"),
            ),
            part(
                "handle",
                vec![
                    cuboid([0.045, 0.01, 0.008], 0.0, 0.0, 0.175),
                    cuboid([0.008, 0.01, 0.02], -0.04, 0.0, 0.155),
                    cuboid([0.008, 0.01, 0.02], 0.04, 0.0, 0.155),
                ],
                0,
                [30, 30, 30],
                Some("carry the kettle by its handle"),
            ),
        ],
    );
    s.cameras.radius = 0.38;
    s.cameras.target = [0.01, 0.0, 0.09];
    s.seed = seed;
    s
}

/// Frying pan: flat body and long handle.
pub fn pan(seed: u64) -> SynthSpec {
    let mut s = SynthSpec::new(
        "pan",
        "pan",
        vec![
            part("pan", vec![cyl(0.09, 0.02, 0.0, 0.0, 0.02)], 0, [70, 70, 80], Some("cook food in the pan")),
            part("handle", vec![cuboid([0.07, 0.012, 0.008], 0.155, 0.0, 0.03)], 0, [140, 80, 40], Some("hold the pan by its handle")),
        ],
    );
    s.cameras.radius = 0.5;
    s.cameras.min_elevation_deg = 30.0;
    s.cameras.target = [0.05, 0.0, 0.02];
    s.seed = seed;
    s
}

/// Five-object training corpus.
pub fn corpus(seed: u64) -> Vec<SynthSpec> {
    vec![mug(seed), cabinet(seed + 1), bottle(seed + 2), hammer(seed + 3), kettle(seed + 4)]
}
