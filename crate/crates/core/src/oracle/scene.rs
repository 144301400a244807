use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::geom::{ImageSize, Intrinsics, PoseSE3};

/// Analytic surface in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// Points with `normal · x = offset`.
    Plane { normal: Vector3<f64>, offset: f64 },
    Sphere { center: Vector3<f64>, radius: f64 },
}

impl Surface {
    /// Smallest ray parameter `λ > min_lambda` at which `origin + λ dir`
    /// meets the surface.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, min_lambda: f64) -> Option<f64> {
        match *self {
            Surface::Plane { normal, offset } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let lambda = (offset - normal.dot(origin)) / denom;
                (lambda > min_lambda).then_some(lambda)
            }
            Surface::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // Numerically stable pair of roots.
                let q = if b > 0.0 { -(b + sq) } else { -(b - sq) };
                let (mut r0, mut r1) = (q / a, c / q);
                if r0 > r1 {
                    std::mem::swap(&mut r0, &mut r1);
                }
                if r0 > min_lambda {
                    Some(r0)
                } else if r1 > min_lambda {
                    Some(r1)
                } else {
                    None
                }
            }
        }
    }

    fn scaled(&self, s: f64) -> Surface {
        match *self {
            Surface::Plane { normal, offset } => Surface::Plane {
                normal,
                offset: offset * s,
            },
            Surface::Sphere { center, radius } => Surface::Sphere {
                center: center * s,
                radius: radius * s,
            },
        }
    }
}

/// Rigid (translational) trajectory of a dynamic sphere's center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectMotion {
    /// `start + frame * velocity`.
    Linear {
        start: Vector3<f64>,
        velocity: Vector3<f64>,
    },
    /// `center + radius (cos φ u + sin φ v)` with `φ = phase + 2π frame / period`.
    Circular {
        center: Vector3<f64>,
        radius: f64,
        u: Vector3<f64>,
        v: Vector3<f64>,
        period: f64,
        phase: f64,
    },
}

impl ObjectMotion {
    pub fn position(&self, frame: usize) -> Vector3<f64> {
        let t = frame as f64;
        match *self {
            ObjectMotion::Linear { start, velocity } => start + velocity * t,
            ObjectMotion::Circular {
                center,
                radius,
                u,
                v,
                period,
                phase,
            } => {
                let phi = phase + std::f64::consts::TAU * t / period;
                center + radius * (phi.cos() * u + phi.sin() * v)
            }
        }
    }

    fn scaled(&self, s: f64) -> ObjectMotion {
        match *self {
            ObjectMotion::Linear { start, velocity } => ObjectMotion::Linear {
                start: start * s,
                velocity: velocity * s,
            },
            ObjectMotion::Circular {
                center,
                radius,
                u,
                v,
                period,
                phase,
            } => ObjectMotion::Circular {
                center: center * s,
                radius: radius * s,
                u,
                v,
                period,
                phase,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicObject {
    pub radius: f64,
    pub motion: ObjectMotion,
}

impl DynamicObject {
    pub fn surface_at(&self, frame: usize) -> Surface {
        Surface::Sphere {
            center: self.motion.position(frame),
            radius: self.radius,
        }
    }
}

/// Camera trajectory generator. Every variant produces world-to-camera poses
/// with the usual camera axes (`+z` forward, `+y` down).
#[derive(Debug, Clone, PartialEq)]
pub enum CameraPath {
    Fixed(PoseSE3),
    /// Straight-line motion at fixed orientation (identity, looking along +z).
    Dolly {
        start: Vector3<f64>,
        end: Vector3<f64>,
    },
    /// Circle of constant radius around `target` in the horizontal plane,
    /// always looking at the target.
    Orbit {
        target: Vector3<f64>,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
    },
    /// Orbit whose radius shrinks or grows linearly (dolly while orbiting).
    DollyOrbit {
        target: Vector3<f64>,
        start_radius: f64,
        end_radius: f64,
        start_angle: f64,
        end_angle: f64,
    },
    /// Circular arc with the camera heading along the tangent.
    Arc {
        center: Vector3<f64>,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
    },
    /// Camera-to-world keyframes spread evenly over the sequence, with
    /// linear/slerp interpolation in between.
    Keyframes(Vec<PoseSE3>),
}

fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> PoseSE3 {
    let forward = (target - eye).normalize();
    let down = Vector3::new(0.0, 1.0, 0.0);
    let right = down.cross(&forward).normalize();
    let down = forward.cross(&right);
    let cam_to_world = Matrix3::from_columns(&[right, down, forward]);
    let rotation = cam_to_world.transpose();
    PoseSE3 {
        rotation,
        translation: -(rotation * eye),
    }
}

fn yaw(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

impl CameraPath {
    /// World-to-camera pose at `frame` of a sequence of `num_frames` frames.
    pub fn pose(&self, frame: usize, num_frames: usize) -> PoseSE3 {
        let s = if num_frames > 1 {
            frame as f64 / (num_frames - 1) as f64
        } else {
            0.0
        };
        let lerp = |a: f64, b: f64| a + (b - a) * s;
        match self {
            CameraPath::Fixed(p) => *p,
            CameraPath::Dolly { start, end } => {
                let center = start + (end - start) * s;
                PoseSE3 {
                    rotation: Matrix3::identity(),
                    translation: -center,
                }
            }
            CameraPath::Orbit {
                target,
                radius,
                start_angle,
                end_angle,
            } => {
                let a = lerp(*start_angle, *end_angle);
                let eye = target + *radius * Vector3::new(a.sin(), 0.0, -a.cos());
                look_at(&eye, target)
            }
            CameraPath::DollyOrbit {
                target,
                start_radius,
                end_radius,
                start_angle,
                end_angle,
            } => {
                let a = lerp(*start_angle, *end_angle);
                let r = lerp(*start_radius, *end_radius);
                let eye = target + r * Vector3::new(a.sin(), 0.0, -a.cos());
                look_at(&eye, target)
            }
            CameraPath::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                let a = lerp(*start_angle, *end_angle);
                let eye = center + *radius * Vector3::new(1.0 - a.cos(), 0.0, a.sin());
                let rot_c2w = yaw(-a);
                let rotation = rot_c2w.transpose();
                PoseSE3 {
                    rotation,
                    translation: -(rotation * eye),
                }
            }
            CameraPath::Keyframes(keys) => {
                if keys.len() == 1 {
                    return keys[0].inverse();
                }
                let x = s * (keys.len() - 1) as f64;
                let i = (x.floor() as usize).min(keys.len() - 2);
                let w = x - i as f64;
                let (a, b) = (&keys[i], &keys[i + 1]);
                let qa = UnitQuaternion::from_matrix(&a.rotation);
                let qb = UnitQuaternion::from_matrix(&b.rotation);
                let q = qa.slerp(&qb, w);
                let c2w = PoseSE3 {
                    rotation: *q.to_rotation_matrix().matrix(),
                    translation: a.translation * (1.0 - w) + b.translation * w,
                };
                c2w.inverse()
            }
        }
    }

    fn scaled(&self, k: f64) -> CameraPath {
        let scale_pose = |p: &PoseSE3| PoseSE3 {
            rotation: p.rotation,
            translation: p.translation * k,
        };
        match self {
            CameraPath::Fixed(p) => CameraPath::Fixed(scale_pose(p)),
            CameraPath::Dolly { start, end } => CameraPath::Dolly {
                start: start * k,
                end: end * k,
            },
            CameraPath::Orbit {
                target,
                radius,
                start_angle,
                end_angle,
            } => CameraPath::Orbit {
                target: target * k,
                radius: radius * k,
                start_angle: *start_angle,
                end_angle: *end_angle,
            },
            CameraPath::DollyOrbit {
                target,
                start_radius,
                end_radius,
                start_angle,
                end_angle,
            } => CameraPath::DollyOrbit {
                target: target * k,
                start_radius: start_radius * k,
                end_radius: end_radius * k,
                start_angle: *start_angle,
                end_angle: *end_angle,
            },
            CameraPath::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => CameraPath::Arc {
                center: center * k,
                radius: radius * k,
                start_angle: *start_angle,
                end_angle: *end_angle,
            },
            CameraPath::Keyframes(keys) => CameraPath::Keyframes(keys.iter().map(scale_pose).collect()),
        }
    }
}

/// Depth noise injected into the pairwise pointmaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation of the additive depth noise, relative to depth.
    pub depth_sigma: f64,
    pub confidence_floor: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            depth_sigma: 0.0,
            confidence_floor: 0.0,
        }
    }
}

/// How the second pointmap of a pair places dynamic pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DynamicPointmaps {
    /// Each pointmap shows its own timestep (moving objects where they are
    /// at that time), so every pixel agrees with the camera motion.
    #[default]
    PerTimestep,
    /// Moving objects in the second pointmap are left where they were at the
    /// first frame's time, as a static-scene predictor would place them.
    /// Those pixels then disagree with the camera motion.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub static_surfaces: Vec<Surface>,
    pub dynamic_objects: Vec<DynamicObject>,
    pub camera_path: CameraPath,
    pub focal: f64,
    pub resolution: ImageSize,
    pub num_frames: usize,
    pub noise: NoiseSpec,
    pub dynamic_pointmaps: DynamicPointmaps,
    pub seed: u64,
}

impl SceneSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::centered(self.focal, self.resolution).expect("validated focal")
    }

    pub fn camera_pose(&self, frame: usize) -> PoseSE3 {
        self.camera_path.pose(frame, self.num_frames)
    }

    /// Sum of distances between consecutive camera centers.
    pub fn path_length(&self) -> f64 {
        (1..self.num_frames)
            .map(|t| (self.camera_pose(t).center() - self.camera_pose(t - 1).center()).norm())
            .sum()
    }

    /// Uniformly rescales all geometry by `k`.
    pub fn scaled(&self, k: f64) -> SceneSpec {
        SceneSpec {
            static_surfaces: self.static_surfaces.iter().map(|s| s.scaled(k)).collect(),
            dynamic_objects: self
                .dynamic_objects
                .iter()
                .map(|o| DynamicObject {
                    radius: o.radius * k,
                    motion: o.motion.scaled(k),
                })
                .collect(),
            camera_path: self.camera_path.scaled(k),
            ..self.clone()
        }
    }

    /// Rescales the scene so the camera path has unit length. Scenes with a
    /// static camera are returned unchanged.
    pub fn normalized_to_unit_path(&self) -> SceneSpec {
        let len = self.path_length();
        if len > 0.0 {
            self.scaled(1.0 / len)
        } else {
            self.clone()
        }
    }

    /// Ground plane, far background wall and three static spheres, seen by a
    /// camera that orbits the middle of the scene while dollying in.
    /// Normalized to a unit-length camera path.
    pub fn dolly_orbit(num_frames: usize, resolution: ImageSize, focal: f64) -> SceneSpec {
        SceneSpec {
            static_surfaces: default_surfaces(),
            dynamic_objects: Vec::new(),
            camera_path: CameraPath::DollyOrbit {
                target: Vector3::new(0.0, 0.0, 6.0),
                start_radius: 6.0,
                end_radius: 5.0,
                start_angle: -0.12,
                end_angle: 0.12,
            },
            focal,
            resolution,
            num_frames,
            noise: NoiseSpec::none(),
            dynamic_pointmaps: DynamicPointmaps::PerTimestep,
            seed: 0,
        }
        .normalized_to_unit_path()
    }

    /// Straight dolly forward over the ground plane.
    pub fn dolly(num_frames: usize, resolution: ImageSize, focal: f64) -> SceneSpec {
        SceneSpec {
            camera_path: CameraPath::Dolly {
                start: Vector3::new(0.0, 0.0, 0.0),
                end: Vector3::new(0.3, 0.0, 1.0),
            },
            ..Self::dolly_orbit(num_frames, resolution, focal)
        }
        .normalized_to_unit_path()
    }

    /// Static geometry with a camera that never moves.
    pub fn static_camera(num_frames: usize, resolution: ImageSize, focal: f64) -> SceneSpec {
        SceneSpec {
            static_surfaces: default_surfaces(),
            dynamic_objects: Vec::new(),
            camera_path: CameraPath::Fixed(PoseSE3::identity()),
            focal,
            resolution,
            num_frames,
            noise: NoiseSpec::none(),
            dynamic_pointmaps: DynamicPointmaps::PerTimestep,
            seed: 0,
        }
    }

    /// Adds a sphere of the given radius circling in a plane parallel to the
    /// image plane, `depth` units in front of the first camera.
    pub fn with_circling_sphere(mut self, depth: f64, radius: f64, orbit: f64, period: f64) -> SceneSpec {
        let first = self.camera_pose(0);
        let c2w = first.inverse();
        let center = c2w.apply(&Vector3::new(0.0, 0.0, depth));
        self.dynamic_objects.push(DynamicObject {
            radius,
            motion: ObjectMotion::Circular {
                center,
                radius: orbit,
                u: c2w.rotation * Vector3::x(),
                v: c2w.rotation * Vector3::y(),
                period,
                phase: 0.0,
            },
        });
        self
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> SceneSpec {
        self.noise = noise;
        self
    }
}

/// Ground at `y = 1.2`, background wall at `z = 12`, three spheres.
fn default_surfaces() -> Vec<Surface> {
    vec![
        Surface::Plane {
            normal: Vector3::new(0.0, 1.0, 0.0),
            offset: 1.2,
        },
        Surface::Plane {
            normal: Vector3::new(0.0, 0.0, 1.0),
            offset: 12.0,
        },
        Surface::Sphere {
            center: Vector3::new(-1.4, 0.6, 5.0),
            radius: 0.6,
        },
        Surface::Sphere {
            center: Vector3::new(1.6, 0.2, 6.5),
            radius: 1.0,
        },
        Surface::Sphere {
            center: Vector3::new(0.2, -0.9, 8.0),
            radius: 0.8,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rotation_angle;

    #[test]
    fn sphere_and_plane_hits() {
        let s = Surface::Sphere {
            center: Vector3::new(0.0, 0.0, 5.0),
            radius: 1.0,
        };
        let o = Vector3::zeros();
        let d = Vector3::new(0.0, 0.0, 1.0);
        assert!((s.intersect(&o, &d, 1e-9).unwrap() - 4.0).abs() < 1e-12);
        let inside = Vector3::new(0.0, 0.0, 5.0);
        assert!((s.intersect(&inside, &d, 1e-9).unwrap() - 1.0).abs() < 1e-12);
        assert!(s.intersect(&o, &Vector3::new(1.0, 0.0, 0.0), 1e-9).is_none());
        let p = Surface::Plane {
            normal: Vector3::new(0.0, 0.0, 1.0),
            offset: 3.0,
        };
        assert!((p.intersect(&o, &Vector3::new(0.5, 0.0, 1.0), 1e-9).unwrap() - 3.0).abs() < 1e-12);
        assert!(p.intersect(&o, &Vector3::new(0.0, 0.0, -1.0), 1e-9).is_none());
    }

    #[test]
    fn look_at_identity() {
        let p = look_at(&Vector3::zeros(), &Vector3::new(0.0, 0.0, 2.0));
        assert!((p.rotation - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn paths_produce_valid_poses() {
        let size = ImageSize::new(48, 64).unwrap();
        let spec = SceneSpec::dolly_orbit(30, size, 50.0);
        assert!((spec.path_length() - 1.0).abs() < 1e-12);
        let keys = CameraPath::Keyframes(vec![
            PoseSE3::identity(),
            PoseSE3::from_axis_angle(&Vector3::y(), 0.2, Vector3::new(1.0, 0.0, 0.0)),
        ]);
        for path in [
            spec.camera_path.clone(),
            CameraPath::Arc { center: Vector3::zeros(), radius: 3.0, start_angle: 0.0, end_angle: 0.5 },
            CameraPath::Orbit { target: Vector3::new(0.0, 0.0, 5.0), radius: 5.0, start_angle: -0.2, end_angle: 0.2 },
            keys.clone(),
        ] {
            for t in 0..10 {
                let p = path.pose(t, 10);
                assert!(PoseSE3::new(p.rotation, p.translation).is_ok());
            }
        }
        let mid = keys.pose(1, 3).inverse();
        assert!((rotation_angle(&mid.rotation) - 0.1).abs() < 1e-12);
        assert!((mid.translation.x - 0.5).abs() < 1e-12);
    }
}
