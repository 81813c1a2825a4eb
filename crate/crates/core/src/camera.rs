//! Pinhole camera, frustum classification and screen-space error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Aabb, Vec3};

/// Pinhole view. Camera space is x right, y down, z forward, so projected
/// coordinates are image columns and rows directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    /// Vertical field of view in degrees.
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visibility {
    Outside,
    Intersecting,
    Inside,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    fn through(normal: Vec3, point: Vec3) -> Self {
        Plane {
            normal,
            offset: -normal.dot(point),
        }
    }

    fn eval(&self, p: Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }
}

/// Orthonormal camera frame plus projection constants.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub origin: Vec3,
    pub right: Vec3,
    pub down: Vec3,
    pub forward: Vec3,
    /// Focal length in pixels, `H / (2 tan(fov_y / 2))`.
    pub focal: f64,
    pub width: f64,
    pub height: f64,
    pub near: f64,
    planes: [Plane; 5],
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("camera: {m}")));
        if !(self.position.is_finite() && self.look_at.is_finite() && self.up.is_finite()) {
            return bad("non-finite vector");
        }
        let dir = self.look_at - self.position;
        if dir.length() == 0.0 {
            return bad("position equals look_at");
        }
        if dir.normalized().cross(self.up).length() <= 1e-9 * self.up.length() {
            return bad("up is parallel to the view direction");
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return bad("fov_y must be in (0, 180)");
        }
        if self.width == 0 || self.height == 0 {
            return bad("viewport must be at least 1x1");
        }
        if !(self.near > 0.0 && self.near.is_finite()) {
            return bad("near must be positive");
        }
        Ok(())
    }

    pub fn focal(&self) -> f64 {
        f64::from(self.height) / (2.0 * (self.fov_y.to_radians() / 2.0).tan())
    }

    pub fn view(&self) -> Result<View> {
        self.validate()?;
        let forward = (self.look_at - self.position).normalized();
        let right = forward.cross(self.up).normalized();
        let down = forward.cross(right);
        let focal = self.focal();
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        let tx = w / 2.0 / focal;
        let ty = h / 2.0 / focal;
        let o = self.position;
        let planes = [
            Plane::through(forward, o + forward * self.near),
            Plane::through(right + forward * tx, o),
            Plane::through(-right + forward * tx, o),
            Plane::through(down + forward * ty, o),
            Plane::through(-down + forward * ty, o),
        ];
        Ok(View {
            origin: o,
            right,
            down,
            forward,
            focal,
            width: w,
            height: h,
            near: self.near,
            planes,
        })
    }
}

impl View {
    /// Camera-space coordinates of a world point.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = p - self.origin;
        Vec3::new(d.dot(self.right), d.dot(self.down), d.dot(self.forward))
    }

    /// Image coordinates and depth, or `None` in front of the near plane.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z < self.near {
            return None;
        }
        Some((
            self.focal * c.x / c.z + self.width / 2.0,
            self.focal * c.y / c.z + self.height / 2.0,
            c.z,
        ))
    }

    /// Classifies a box against the near plane and the four side planes.
    pub fn classify(&self, b: &Aabb) -> Visibility {
        let mut inside = true;
        for pl in &self.planes {
            let n = pl.normal;
            let pick = |hi: bool, lo: f64, up: f64| if hi { up } else { lo };
            let pv = Vec3::new(
                pick(n.x >= 0.0, b.min.x, b.max.x),
                pick(n.y >= 0.0, b.min.y, b.max.y),
                pick(n.z >= 0.0, b.min.z, b.max.z),
            );
            if pl.eval(pv) < 0.0 {
                return Visibility::Outside;
            }
            let nv = Vec3::new(
                pick(n.x < 0.0, b.min.x, b.max.x),
                pick(n.y < 0.0, b.min.y, b.max.y),
                pick(n.z < 0.0, b.min.z, b.max.z),
            );
            if pl.eval(nv) < 0.0 {
                inside = false;
            }
        }
        if inside {
            Visibility::Inside
        } else {
            Visibility::Intersecting
        }
    }

    pub fn point_visible(&self, p: Vec3) -> bool {
        self.planes.iter().all(|pl| pl.eval(p) >= 0.0)
    }

    /// Projected longest edge of `b` in pixels, measured at the box's
    /// nearest point; infinite when the camera is inside the box.
    pub fn screen_space_error(&self, b: &Aabb) -> f64 {
        let d = b.distance_to(self.origin);
        if d == 0.0 {
            return f64::INFINITY;
        }
        b.longest_edge() / d * self.focal
    }
}

pub fn screen_space_error(b: &Aabb, cam: &Camera) -> Result<f64> {
    Ok(cam.view()?.screen_space_error(b))
}

pub fn frustum_classify(b: &Aabb, cam: &Camera) -> Result<Visibility> {
    Ok(cam.view()?.classify(b))
}
