use super::ProjectorError;
use crate::volume::VolumeGeometry;

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn axpy(a: f64, x: Vec3, y: Vec3) -> Vec3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

/// Rotation about the vertical (z) axis.
fn rotate_z(v: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let snap = |x: f64| if x.abs() < 1e-15 { 0.0 } else { x };
    [snap(c * v[0] - s * v[1]), snap(s * v[0] + c * v[1]), v[2]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewId {
    Pa,
    Lat,
    Custom,
}

impl ViewId {
    pub fn name(self) -> &'static str {
        match self {
            ViewId::Pa => "pa",
            ViewId::Lat => "lat",
            ViewId::Custom => "custom",
        }
    }
}

/// Detector pixel grid. Pixel centres sit at integer `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSpec {
    pub nu: usize,
    pub nv: usize,
    pub pitch_u: f64,
    pub pitch_v: f64,
}

impl DetectorSpec {
    pub fn new(nu: usize, nv: usize, pitch_u: f64, pitch_v: f64) -> Result<Self, ProjectorError> {
        let d = Self { nu, nv, pitch_u, pitch_v };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ProjectorError> {
        if self.nu < 2 || self.nv < 2 {
            return Err(ProjectorError::Geometry(format!("detector {}x{} too small", self.nu, self.nv)));
        }
        let ok = |p: f64| p.is_finite() && p > 0.0;
        if !ok(self.pitch_u) || !ok(self.pitch_v) {
            return Err(ProjectorError::Geometry("detector pitch must be positive".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.nu * self.nv
    }

    /// Detector whose pixels exactly cover the volume's footprint for a pose
    /// with the given in-plane axes.
    pub fn fitted(geom: &VolumeGeometry, u_axis: Vec3, v_axis: Vec3, nu: usize, nv: usize) -> Result<Self, ProjectorError> {
        let e = geom.extent();
        let span = |a: Vec3| (0..3).map(|i| e[i] * a[i].abs()).sum::<f64>();
        Self::new(nu, nv, span(u_axis) / nu as f64, span(v_axis) / nv as f64)
    }
}

/// Parallel-beam view: ray direction, detector axes and the position of
/// pixel `(0, 0)`'s centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPose {
    pub view_id: ViewId,
    pub ray_direction: Vec3,
    pub detector_u_axis: Vec3,
    pub detector_v_axis: Vec3,
    pub detector_origin: Vec3,
}

pub const PA_U: Vec3 = [1.0, 0.0, 0.0];
pub const PA_V: Vec3 = [0.0, 0.0, 1.0];

impl ViewPose {
    /// Pose whose detector is centred on the volume and whose in-plane axes are
    /// `u`, `v`; the ray direction is `u × v`.
    pub fn centered(view_id: ViewId, u: Vec3, v: Vec3, geom: &VolumeGeometry, det: &DetectorSpec) -> Result<Self, ProjectorError> {
        let c = geom.center();
        let half_u = (det.nu as f64 - 1.0) / 2.0 * det.pitch_u;
        let half_v = (det.nv as f64 - 1.0) / 2.0 * det.pitch_v;
        let origin = axpy(-half_v, v, axpy(-half_u, u, c));
        let pose = Self { view_id, ray_direction: cross(u, v), detector_u_axis: u, detector_v_axis: v, detector_origin: origin };
        pose.validate()?;
        Ok(pose)
    }

    /// Posterior-anterior view: rays along −y, u along x, v along z.
    pub fn pa(geom: &VolumeGeometry, det: &DetectorSpec) -> Result<Self, ProjectorError> {
        Self::centered(ViewId::Pa, PA_U, PA_V, geom, det)
    }

    /// Lateral view: the PA pose rotated by 90° about z.
    pub fn lat(geom: &VolumeGeometry, det: &DetectorSpec) -> Result<Self, ProjectorError> {
        Self::centered(ViewId::Lat, rotate_z(PA_U, std::f64::consts::FRAC_PI_2), PA_V, geom, det)
    }

    /// PA pose rotated by `angle` radians about z.
    pub fn rotated(angle: f64, geom: &VolumeGeometry, det: &DetectorSpec) -> Result<Self, ProjectorError> {
        Self::centered(ViewId::Custom, rotate_z(PA_U, angle), PA_V, geom, det)
    }

    pub fn validate(&self) -> Result<(), ProjectorError> {
        let (d, u, v) = (self.ray_direction, self.detector_u_axis, self.detector_v_axis);
        const TOL: f64 = 1e-10;
        for (name, a) in [("ray_direction", d), ("u_axis", u), ("v_axis", v)] {
            if (dot(a, a).sqrt() - 1.0).abs() > TOL {
                return Err(ProjectorError::Geometry(format!("{name} is not unit length")));
            }
        }
        if dot(d, u).abs() > TOL || dot(d, v).abs() > TOL || dot(u, v).abs() > TOL {
            return Err(ProjectorError::Geometry("pose axes are not mutually orthogonal".into()));
        }
        let w = cross(u, v);
        if dot(w, d) < 1.0 - TOL {
            return Err(ProjectorError::Geometry("pose triad (u, v, ray) is not right-handed".into()));
        }
        if self.detector_origin.iter().any(|x| !x.is_finite()) {
            return Err(ProjectorError::Geometry("detector origin is not finite".into()));
        }
        Ok(())
    }

    /// World-space centre of detector pixel `(a, b)` (a point on that pixel's ray).
    pub fn pixel_point(&self, det: &DetectorSpec, a: f64, b: f64) -> Vec3 {
        axpy(b * det.pitch_v, self.detector_v_axis, axpy(a * det.pitch_u, self.detector_u_axis, self.detector_origin))
    }
}

/// Projects a millimetre point onto the detector: fractional `(u, v)` in pixel units.
///
/// Parallel projection, so any shift along the ray direction leaves the
/// result unchanged. Points off the detector return out-of-range coordinates.
pub fn project_point(pose: &ViewPose, det: &DetectorSpec, x: Vec3) -> (f64, f64) {
    let r = [x[0] - pose.detector_origin[0], x[1] - pose.detector_origin[1], x[2] - pose.detector_origin[2]];
    (dot(r, pose.detector_u_axis) / det.pitch_u, dot(r, pose.detector_v_axis) / det.pitch_v)
}

/// Canonical biplanar geometry: PA and LAT poses with detectors fitted to the volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiplanarGeometry {
    pub volume: VolumeGeometry,
    pub pa: ViewPose,
    pub lat: ViewPose,
    pub detector_pa: DetectorSpec,
    pub detector_lat: DetectorSpec,
}

impl BiplanarGeometry {
    pub fn fitted(volume: VolumeGeometry, nu: usize, nv: usize) -> Result<Self, ProjectorError> {
        let lat_u = rotate_z(PA_U, std::f64::consts::FRAC_PI_2);
        let detector_pa = DetectorSpec::fitted(&volume, PA_U, PA_V, nu, nv)?;
        let detector_lat = DetectorSpec::fitted(&volume, lat_u, PA_V, nu, nv)?;
        Ok(Self {
            volume,
            pa: ViewPose::pa(&volume, &detector_pa)?,
            lat: ViewPose::lat(&volume, &detector_lat)?,
            detector_pa,
            detector_lat,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};

    fn geom() -> VolumeGeometry {
        VolumeGeometry::new(Dims::cube(32), Spacing::isotropic(1.5)).unwrap()
    }

    #[test]
    fn canonical_poses_are_orthonormal_and_rotated() {
        let g = BiplanarGeometry::fitted(geom(), 128, 128).unwrap();
        assert_eq!(g.pa.ray_direction, [0.0, -1.0, 0.0]);
        assert_eq!(g.lat.ray_direction, rotate_z(g.pa.ray_direction, std::f64::consts::FRAC_PI_2));
        assert_eq!(g.lat.detector_u_axis, rotate_z(g.pa.detector_u_axis, std::f64::consts::FRAC_PI_2));
        assert_eq!(g.detector_pa.pitch_u, 48.0 / 128.0);
    }

    #[test]
    fn volume_center_hits_detector_center() {
        let g = BiplanarGeometry::fitted(geom(), 128, 96).unwrap();
        for (pose, det) in [(g.pa, g.detector_pa), (g.lat, g.detector_lat)] {
            let (u, v) = project_point(&pose, &det, g.volume.center());
            assert!((u - 63.5).abs() < 1e-12 && (v - 47.5).abs() < 1e-12, "{u} {v}");
        }
    }

    #[test]
    fn shifting_along_ray_is_invisible() {
        let g = BiplanarGeometry::fitted(geom(), 64, 64).unwrap();
        let x = [3.0, 17.5, 40.25];
        let (u0, v0) = project_point(&g.pa, &g.detector_pa, x);
        for t in [-50.0, -1.0, 2.5, 100.0] {
            let y = axpy(t, g.pa.ray_direction, x);
            let (u, v) = project_point(&g.pa, &g.detector_pa, y);
            assert!((u - u0).abs() < 1e-12 && (v - v0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_pose() {
        let mut p = BiplanarGeometry::fitted(geom(), 8, 8).unwrap().pa;
        p.detector_u_axis = [1.0, 0.1, 0.0];
        assert!(p.validate().is_err());
        let mut p = BiplanarGeometry::fitted(geom(), 8, 8).unwrap().pa;
        p.ray_direction = [0.0, 1.0, 0.0];
        assert!(p.validate().is_err());
    }
}
