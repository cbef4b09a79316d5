//! Analytic synthetic scenes with oracle renderers: textured primitives,
//! preset scene builders, and dense-quadrature ground-truth views.

use crate::error::{Error, Result};
use crate::geometry::{generate_ray, CameraIntrinsics, CameraPose, Vec3};
use crate::io::{DepthMap, ImageRgb};
use crate::renderer::{self, midpoint_samples};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    Box { min: Vec3, max: Vec3 },
}

impl Primitive {
    pub fn contains(&self, p: Vec3) -> bool {
        match self {
            Primitive::Sphere { center, radius } => (p - *center).norm_squared() <= radius * radius,
            Primitive::Box { min, max } => {
                p.x >= min.x
                    && p.x <= max.x
                    && p.y >= min.y
                    && p.y <= max.y
                    && p.z >= min.z
                    && p.z <= max.z
            }
        }
    }
}

fn default_axes() -> [bool; 3] {
    [true, true, true]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Texture {
    Solid {
        color: Vec3,
    },
    /// Parity checker over the enabled axes with the given cell size.
    Checker {
        scale: f64,
        color_a: Vec3,
        color_b: Vec3,
        #[serde(default = "default_axes")]
        axes: [bool; 3],
    },
    /// Bands along one axis (0 = x, 1 = y, 2 = z).
    Stripes {
        axis: usize,
        scale: f64,
        color_a: Vec3,
        color_b: Vec3,
    },
    /// Aperiodic cell pattern: each grid cell picks a palette color by a
    /// deterministic hash of its index. High-frequency edges without the
    /// repeated-texture ambiguity of a plain checker.
    CellNoise {
        scale: f64,
        palette: Vec<Vec3>,
        salt: u64,
        #[serde(default = "default_axes")]
        axes: [bool; 3],
    },
}

fn cell_hash(ix: i64, iy: i64, iz: i64, salt: u64) -> u64 {
    let mut h = salt ^ 0x9e37_79b9_7f4a_7c15;
    for v in [ix, iy, iz] {
        h ^= v as u64;
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h ^= h >> 27;
    }
    h ^ (h >> 31)
}

impl Texture {
    pub fn color_at(&self, p: Vec3) -> Vec3 {
        match self {
            Texture::Solid { color } => *color,
            Texture::Checker {
                scale,
                color_a,
                color_b,
                axes,
            } => {
                let mut parity = 0i64;
                for (enabled, c) in axes.iter().zip([p.x, p.y, p.z]) {
                    if *enabled {
                        parity += (c / scale).floor() as i64;
                    }
                }
                if parity.rem_euclid(2) == 0 {
                    *color_a
                } else {
                    *color_b
                }
            }
            Texture::Stripes {
                axis,
                scale,
                color_a,
                color_b,
            } => {
                let c = [p.x, p.y, p.z][*axis];
                if ((c / scale).floor() as i64).rem_euclid(2) == 0 {
                    *color_a
                } else {
                    *color_b
                }
            }
            Texture::CellNoise {
                scale,
                palette,
                salt,
                axes,
            } => {
                let cell = |enabled: bool, c: f64| {
                    if enabled {
                        (c / scale).floor() as i64
                    } else {
                        0
                    }
                };
                let h = cell_hash(
                    cell(axes[0], p.x),
                    cell(axes[1], p.y),
                    cell(axes[2], p.z),
                    *salt,
                );
                palette[(h % palette.len() as u64) as usize]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Primitive,
    pub density: f64,
    pub texture: Texture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraRole {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub role: CameraRole,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
}

/// An analytic scene: a union of textured primitives plus calibrated cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub near: f64,
    pub far: f64,
    /// Scene scale used for ray-filter threshold defaults.
    pub diameter: f64,
    /// Quadrature resolution of the oracle renderer.
    pub oracle_n_quad: usize,
    pub seed: u64,
    #[serde(rename = "object")]
    pub objects: Vec<SceneObject>,
    #[serde(rename = "camera")]
    pub cameras: Vec<SceneCamera>,
}

impl Scene {
    /// Volume density at a point: the max over containing primitives.
    pub fn density(&self, p: Vec3) -> f64 {
        let mut d: f64 = 0.0;
        for obj in &self.objects {
            if obj.shape.contains(p) {
                d = d.max(obj.density);
            }
        }
        d
    }

    /// Emitted color at a point: the first containing primitive's texture.
    pub fn color(&self, p: Vec3) -> Vec3 {
        for obj in &self.objects {
            if obj.shape.contains(p) {
                return obj.texture.color_at(p);
            }
        }
        Vec3::ZERO
    }

    pub fn train_camera_indices(&self) -> Vec<usize> {
        self.cameras
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == CameraRole::Train)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn test_camera_indices(&self) -> Vec<usize> {
        self.cameras
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == CameraRole::Test)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn camera_pairs(&self) -> Vec<(CameraIntrinsics, CameraPose)> {
        self.cameras
            .iter()
            .map(|c| (c.intrinsics, c.pose))
            .collect()
    }

    pub fn image_dims(&self) -> Vec<(u32, u32)> {
        self.cameras
            .iter()
            .map(|c| (c.intrinsics.width, c.intrinsics.height))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.far > self.near && self.near >= 0.0) {
            return Err(Error::Config(format!(
                "invalid near/far [{}, {}]",
                self.near, self.far
            )));
        }
        if self.diameter <= 0.0 {
            return Err(Error::Config("diameter must be positive".into()));
        }
        if self.oracle_n_quad < 512 {
            return Err(Error::Config(format!(
                "oracle_n_quad {} below the 512 floor",
                self.oracle_n_quad
            )));
        }
        for cam in &self.cameras {
            cam.intrinsics.validate()?;
            if !cam.pose.rotation.is_rotation(1e-9) {
                return Err(Error::Config("camera rotation is not orthonormal".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("scene serialize: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path)?;
        let scene: Scene =
            toml::from_str(&text).map_err(|e| Error::Config(format!("scene parse: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Ground-truth view rendered by dense quadrature on the analytic fields.
#[derive(Debug, Clone)]
pub struct OracleView {
    pub camera_index: usize,
    pub image: ImageRgb,
    pub depth: DepthMap,
    /// Per-pixel accumulated alpha (1 - final transmittance), used to mask
    /// background pixels out of depth comparisons.
    pub opacity: Vec<f64>,
}

/// Render one camera with dense midpoint quadrature of the analytic
/// density/color fields; depth is the weight-averaged sample distance.
pub fn oracle_render(scene: &Scene, camera_index: usize, n_quad: usize) -> Result<OracleView> {
    if n_quad < 512 {
        return Err(Error::InvalidInput(format!(
            "oracle quadrature {n_quad} below the 512 floor"
        )));
    }
    let cam = &scene.cameras[camera_index];
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let samples = midpoint_samples(scene.near, scene.far, n_quad)?;

    let rows: Vec<Vec<(Vec3, f64, f64)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut sigmas = vec![0.0; n_quad];
            let mut colors = vec![Vec3::ZERO; n_quad];
            let mut row = Vec::with_capacity(w as usize);
            for x in 0..w {
                let ray = generate_ray(&cam.intrinsics, &cam.pose, (x as f64, y as f64))
                    .expect("pixel in bounds");
                for (i, &t) in samples.t_values.iter().enumerate() {
                    let p = crate::geometry::point_at(&ray, t);
                    sigmas[i] = scene.density(p);
                    colors[i] = scene.color(p);
                }
                let out = renderer::render(&sigmas, &colors, &samples).expect("valid densities");
                let alpha = 1.0 - out.transmittance.last().copied().unwrap_or(1.0)
                    + out.weights.last().copied().unwrap_or(0.0);
                row.push((out.color, out.depth, alpha));
            }
            row
        })
        .collect();

    let mut image = ImageRgb::new(w, h);
    let mut depth = DepthMap::new(w, h);
    let mut opacity = vec![0.0; (w * h) as usize];
    for (y, row) in rows.iter().enumerate() {
        for (x, &(c, d, a)) in row.iter().enumerate() {
            image.set(x as u32, y as u32, c);
            depth.values[y * w as usize + x] = d;
            opacity[y * w as usize + x] = a;
        }
    }
    Ok(OracleView {
        camera_index,
        image,
        depth,
        opacity,
    })
}

fn shared_intrinsics(size: u32) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: size as f64 * 1.125,
        fy: size as f64 * 1.125,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        width: size,
        height: size,
    }
}

fn arc_cameras(size: u32, radius: f64, height: f64, target: Vec3) -> Vec<SceneCamera> {
    let intr = shared_intrinsics(size);
    let up = Vec3::new(0.0, 1.0, 0.0);
    let angles = [-0.5f64, -0.25, 0.0, 0.25, 0.5];
    angles
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let eye = Vec3::new(radius * a.sin(), height, -radius * a.cos());
            SceneCamera {
                role: if i % 2 == 0 {
                    CameraRole::Train
                } else {
                    CameraRole::Test
                },
                intrinsics: intr,
                pose: CameraPose::look_at(eye, target, up),
            }
        })
        .collect()
}

/// Build a named preset scene at the given image size.
pub fn preset(name: &str, size: u32) -> Result<Scene> {
    let scene = match name {
        "two-spheres" => Scene {
            name: name.into(),
            near: 1.2,
            far: 5.0,
            diameter: 2.8,
            oracle_n_quad: 1024,
            seed: 7,
            objects: vec![
                SceneObject {
                    shape: Primitive::Sphere {
                        center: Vec3::new(-0.65, 0.0, 0.0),
                        radius: 0.55,
                    },
                    density: 400.0,
                    texture: Texture::Solid {
                        color: Vec3::new(0.2, 0.55, 0.85),
                    },
                },
                SceneObject {
                    shape: Primitive::Sphere {
                        center: Vec3::new(0.65, 0.1, 0.2),
                        radius: 0.55,
                    },
                    density: 400.0,
                    texture: Texture::Checker {
                        scale: 0.18,
                        color_a: Vec3::new(0.95, 0.85, 0.2),
                        color_b: Vec3::new(0.6, 0.15, 0.1),
                        axes: [true, true, true],
                    },
                },
            ],
            cameras: arc_cameras(size, 3.0, 0.25, Vec3::ZERO),
        },
        "boxes-grid" => {
            let mut objects = Vec::new();
            for i in -1i32..=1 {
                for j in -1i32..=1 {
                    let c = Vec3::new(i as f64 * 0.8, j as f64 * 0.8, 0.0);
                    let half = 0.22;
                    let texture = if (i + j).rem_euclid(2) == 0 {
                        Texture::Checker {
                            scale: 0.11,
                            color_a: Vec3::new(0.9, 0.9, 0.9),
                            color_b: Vec3::new(0.1, 0.1, 0.4),
                            axes: [true, true, true],
                        }
                    } else {
                        Texture::Stripes {
                            axis: ((i.rem_euclid(2)) as usize) % 2,
                            scale: 0.09,
                            color_a: Vec3::new(0.85, 0.3, 0.1),
                            color_b: Vec3::new(0.15, 0.7, 0.3),
                        }
                    };
                    objects.push(SceneObject {
                        shape: Primitive::Box {
                            min: c - Vec3::splat(half),
                            max: c + Vec3::splat(half),
                        },
                        density: 400.0,
                        texture,
                    });
                }
            }
            Scene {
                name: name.into(),
                near: 1.5,
                far: 5.5,
                diameter: 3.0,
                oracle_n_quad: 1024,
                seed: 7,
                objects,
                cameras: arc_cameras(size, 3.2, 0.3, Vec3::ZERO),
            }
        }
        "wall-and-post" => {
            let intr = shared_intrinsics(size);
            let up = Vec3::new(0.0, 1.0, 0.0);
            let target = Vec3::new(0.0, 0.0, 2.6);
            let xs = [-0.55f64, -0.275, 0.0, 0.275, 0.55];
            let cameras = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| SceneCamera {
                    role: if i % 2 == 0 {
                        CameraRole::Train
                    } else {
                        CameraRole::Test
                    },
                    intrinsics: intr,
                    pose: CameraPose::look_at(Vec3::new(x, 0.0, 0.0), target, up),
                })
                .collect();
            Scene {
                name: name.into(),
                near: 0.8,
                far: 4.5,
                diameter: 4.0,
                oracle_n_quad: 1024,
                seed: 7,
                objects: vec![
                    SceneObject {
                        shape: Primitive::Box {
                            min: Vec3::new(-2.1, -1.6, 3.0),
                            max: Vec3::new(2.1, 1.6, 3.3),
                        },
                        density: 400.0,
                        texture: Texture::CellNoise {
                            scale: 0.21,
                            palette: vec![
                                Vec3::new(0.92, 0.86, 0.25),
                                Vec3::new(0.12, 0.2, 0.7),
                                Vec3::new(0.85, 0.35, 0.15),
                                Vec3::new(0.2, 0.65, 0.35),
                                Vec3::new(0.9, 0.9, 0.9),
                            ],
                            salt: 11,
                            axes: [true, true, false],
                        },
                    },
                    SceneObject {
                        shape: Primitive::Box {
                            min: Vec3::new(-0.14, -1.4, 1.9),
                            max: Vec3::new(0.14, 1.4, 2.18),
                        },
                        density: 400.0,
                        texture: Texture::Stripes {
                            axis: 1,
                            scale: 0.12,
                            color_a: Vec3::new(0.85, 0.12, 0.12),
                            color_b: Vec3::new(0.95, 0.95, 0.95),
                        },
                    },
                ],
                cameras,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (expected two-spheres, boxes-grid, or wall-and-post)"
            )))
        }
    };
    scene.validate()?;
    Ok(scene)
}

pub const PRESET_NAMES: [&str; 3] = ["two-spheres", "boxes-grid", "wall-and-post"];
