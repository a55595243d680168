//! Target geometry and the per-pixel raycast.
//!
//! All targets sit on a cylindrical band of radius `d_target_m` around
//! the stage axis, with the sensor at the axis. Every ray therefore hits
//! the band at range `d_target / cos(elevation)` with incidence equal to
//! the elevation, which makes the "same distance" property exact in the
//! central row and gives a closed-form ground truth.
//!
//! Band layout in world azimuth: a calibration panel with a circular
//! marker grid on each side, three Lambertian reflectance stripes in the
//! middle, and gaps that return nothing.

use serde::{Deserialize, Serialize};

use super::intrinsics::{Direction, Intrinsics};

/// One vertical Lambertian reflectance stripe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stripe {
    pub rho: f64,
    pub az_min_deg: f64,
    pub az_max_deg: f64,
}

/// Azimuth band occupied by one calibration panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub az_min_deg: f64,
    pub az_max_deg: f64,
}

/// Circular high-reflectance markers arranged in a grid on each panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerGrid {
    /// Elevation of each marker row, degrees.
    pub rows_el_deg: Vec<f64>,
    /// Azimuth spacing between marker columns, degrees.
    pub col_step_deg: f64,
    /// Clearance between the panel edge and the first/last column, degrees.
    pub col_margin_deg: f64,
    /// Angular radius of one marker, degrees.
    pub radius_deg: f64,
    pub rho_marker: f64,
    pub rho_panel_bg: f64,
}

impl Default for MarkerGrid {
    fn default() -> Self {
        Self {
            rows_el_deg: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            col_step_deg: 5.0,
            col_margin_deg: 3.0,
            radius_deg: 1.5,
            rho_marker: 0.95,
            rho_panel_bg: 0.05,
        }
    }
}

/// Known world position of one marker center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerPos {
    pub panel: usize,
    pub row: usize,
    pub col: usize,
    pub az_deg: f64,
    pub el_deg: f64,
}

/// What a ray hit, for ground-truth bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetId {
    Stripe(u8),
    PanelBackground(u8),
    Marker(u8),
}

impl TargetId {
    /// Compact code for the simulation sidecar; -1 means miss.
    pub fn code(self) -> i8 {
        match self {
            TargetId::Stripe(i) => i as i8,
            TargetId::PanelBackground(p) => 10 + p as i8,
            TargetId::Marker(p) => 20 + p as i8,
        }
    }
}

/// The semicircular target rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetScene {
    /// Radius of the target band around the stage axis, m.
    pub d_target_m: f64,
    /// Vertical half-extent of all target surfaces, degrees of elevation.
    pub el_half_deg: f64,
    pub stripes: Vec<Stripe>,
    pub panels: Vec<PanelSpec>,
    pub markers: MarkerGrid,
}

impl Default for TargetScene {
    fn default() -> Self {
        Self {
            d_target_m: 1.1,
            el_half_deg: 15.0,
            stripes: vec![
                Stripe { rho: 0.18, az_min_deg: -15.0, az_max_deg: -5.0 },
                Stripe { rho: 0.50, az_min_deg: -5.0, az_max_deg: 5.0 },
                Stripe { rho: 0.80, az_min_deg: 5.0, az_max_deg: 15.0 },
            ],
            panels: vec![
                PanelSpec { az_min_deg: -120.0, az_max_deg: -25.0 },
                PanelSpec { az_min_deg: 25.0, az_max_deg: 120.0 },
            ],
            markers: MarkerGrid::default(),
        }
    }
}

impl TargetScene {
    /// All marker centers in world coordinates, panel-major, row-major.
    pub fn marker_positions(&self) -> Vec<MarkerPos> {
        let mut out = Vec::new();
        for (p, panel) in self.panels.iter().enumerate() {
            let lo = panel.az_min_deg + self.markers.col_margin_deg;
            let hi = panel.az_max_deg - self.markers.col_margin_deg;
            let n_cols = ((hi - lo) / self.markers.col_step_deg).floor() as usize + 1;
            for (r, &el) in self.markers.rows_el_deg.iter().enumerate() {
                for c in 0..n_cols {
                    out.push(MarkerPos {
                        panel: p,
                        row: r,
                        col: c,
                        az_deg: lo + c as f64 * self.markers.col_step_deg,
                        el_deg: el,
                    });
                }
            }
        }
        out
    }

    /// Surface reflectance and identity at a world direction, or None
    /// beyond the targets.
    pub fn surface_at(&self, az_deg: f64, el_deg: f64) -> Option<(f64, TargetId)> {
        if el_deg.abs() > self.el_half_deg {
            return None;
        }
        let az = wrap_deg(az_deg);
        for (i, s) in self.stripes.iter().enumerate() {
            if az >= s.az_min_deg && az < s.az_max_deg {
                return Some((s.rho, TargetId::Stripe(i as u8)));
            }
        }
        for (p, panel) in self.panels.iter().enumerate() {
            if az >= panel.az_min_deg && az < panel.az_max_deg {
                let m = &self.markers;
                let lo = panel.az_min_deg + m.col_margin_deg;
                let hi = panel.az_max_deg - m.col_margin_deg;
                let n_cols = ((hi - lo) / m.col_step_deg).floor() as i64 + 1;
                let c = ((az - lo) / m.col_step_deg).round() as i64;
                if c >= 0 && c < n_cols {
                    let az_c = lo + c as f64 * m.col_step_deg;
                    for &el_c in &m.rows_el_deg {
                        let da = az - az_c;
                        let de = el_deg - el_c;
                        if da * da + de * de <= m.radius_deg * m.radius_deg {
                            return Some((m.rho_marker, TargetId::Marker(p as u8)));
                        }
                    }
                }
                return Some((m.rho_panel_bg, TargetId::PanelBackground(p as u8)));
            }
        }
        None
    }

    /// Ground-truth range of any ray that reaches the band, by elevation.
    pub fn range_at_elevation(&self, el_rad: f64) -> f64 {
        self.d_target_m / el_rad.cos()
    }
}

fn wrap_deg(az: f64) -> f64 {
    let mut a = az % 360.0;
    if a >= 180.0 {
        a -= 360.0;
    } else if a < -180.0 {
        a += 360.0;
    }
    a
}

/// Result of casting one pixel ray into the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range_m: f64,
    /// Effective reflectance, edge-blended over the pixel footprint.
    pub rho: f64,
    pub incidence_rad: f64,
    pub target: TargetId,
    /// Sensor-frame direction of the pixel ray (for beam lookup).
    pub dir: Direction,
}

/// Edge-blended surface lookup over a rectangular angular footprint.
///
/// When the footprint straddles a reflectance boundary the returned rho
/// is the sub-pixel average, so marker centroids and stripe edges behave
/// like a real integrating pixel rather than a binary mask.
pub fn sample_footprint(
    scene: &TargetScene,
    az_world_deg: f64,
    el_deg: f64,
    half_az_deg: f64,
    half_el_deg: f64,
) -> Option<(f64, TargetId)> {
    let center = scene.surface_at(az_world_deg, el_deg);
    let corners = [
        scene.surface_at(az_world_deg - half_az_deg, el_deg - half_el_deg),
        scene.surface_at(az_world_deg + half_az_deg, el_deg - half_el_deg),
        scene.surface_at(az_world_deg - half_az_deg, el_deg + half_el_deg),
        scene.surface_at(az_world_deg + half_az_deg, el_deg + half_el_deg),
    ];

    let uniform = corners.iter().all(|c| match (c, &center) {
        (Some((r1, t1)), Some((r2, t2))) => r1 == r2 && t1 == t2,
        (None, None) => true,
        _ => false,
    });
    if uniform {
        return center;
    }

    // 4x4 sub-sampling across the footprint
    let mut rho_sum = 0.0;
    let mut counts: Vec<(TargetId, u32)> = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            let da = (i as f64 + 0.5) / 4.0 * 2.0 * half_az_deg - half_az_deg;
            let de = (j as f64 + 0.5) / 4.0 * 2.0 * half_el_deg - half_el_deg;
            if let Some((r, t)) = scene.surface_at(az_world_deg + da, el_deg + de) {
                rho_sum += r;
                match counts.iter_mut().find(|(id, _)| *id == t) {
                    Some((_, n)) => *n += 1,
                    None => counts.push((t, 1)),
                }
            }
        }
    }
    let mut best: Option<(TargetId, u32)> = None;
    for &(t, n) in &counts {
        if best.map_or(true, |(_, bn)| n > bn) {
            best = Some((t, n));
        }
    }
    best.map(|(target, _)| (rho_sum / 16.0, target))
}

/// Scene hit for a known ray direction at a given stage angle.
pub fn hit_from_direction(
    dir: Direction,
    phi_stage_deg: f64,
    scene: &TargetScene,
    half_az_deg: f64,
    half_el_deg: f64,
) -> Option<Hit> {
    let az_world = dir.az_rad.to_degrees() + phi_stage_deg;
    let el_deg = dir.el_rad.to_degrees();
    let (rho, target) = sample_footprint(scene, az_world, el_deg, half_az_deg, half_el_deg)?;
    Some(Hit {
        range_m: scene.range_at_elevation(dir.el_rad),
        rho,
        incidence_rad: dir.el_rad.abs(),
        target,
        dir,
    })
}

/// Casts the ray of a continuous pixel position into the scene at the
/// given stage angle.
pub fn raycast(
    u: f64,
    v: f64,
    phi_stage_deg: f64,
    scene: &TargetScene,
    k: &Intrinsics,
) -> Option<Hit> {
    let dir = k.unproject(u, v);
    // pixel footprint in angle space (half-extent per axis)
    let half_az = 0.5 / k.fx * (180.0 / std::f64::consts::PI);
    let half_el = 0.5 / k.fy * (180.0 / std::f64::consts::PI);
    hit_from_direction(dir, phi_stage_deg, scene, half_az, half_el)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stripe_center_range_is_exact() {
        let scene = TargetScene::default();
        let k = Intrinsics::default();
        // boresight pixel, stage pointing at the middle stripe
        let hit = raycast(k.cx, k.cy, 0.0, &scene, &k).expect("hit");
        assert_eq!(hit.range_m, 1.1);
        assert_eq!(hit.incidence_rad, 0.0);
        assert_eq!(hit.target, TargetId::Stripe(1));
        assert_eq!(hit.rho, 0.50);
    }

    #[test]
    fn range_grows_with_elevation_within_bound() {
        let scene = TargetScene::default();
        let el = 13.75_f64.to_radians();
        let r = scene.range_at_elevation(el);
        assert!((r - 1.1 / el.cos()).abs() < 1e-12);
        assert!((r - 1.1325).abs() < 1e-4, "r = {r}");
        // the variation stays far below the coarse bound of 0.27 m
        assert!(r - 1.1 <= 0.27);
    }

    #[test]
    fn gap_between_targets_misses() {
        let scene = TargetScene::default();
        let k = Intrinsics::default();
        // boresight at azimuth 20 deg: between the 0.80 stripe (ends at 15)
        // and the right panel (starts at 25)
        let hit = raycast(k.cx, k.cy, 20.0, &scene, &k);
        assert!(hit.is_none());
    }

    #[test]
    fn elevation_outside_band_misses() {
        let scene = TargetScene::default();
        assert!(scene.surface_at(0.0, 16.0).is_none());
        assert!(scene.surface_at(0.0, -16.0).is_none());
        assert!(scene.surface_at(0.0, 14.9).is_some());
    }

    #[test]
    fn marker_lookup_matches_grid() {
        let scene = TargetScene::default();
        let markers = scene.marker_positions();
        assert!(!markers.is_empty());
        for m in &markers {
            let (rho, id) = scene.surface_at(m.az_deg, m.el_deg).expect("on panel");
            assert_eq!(rho, scene.markers.rho_marker, "marker at {m:?}");
            assert_eq!(id, TargetId::Marker(m.panel as u8));
            // just outside the radius: panel background
            let (rho_bg, _) = scene
                .surface_at(m.az_deg + scene.markers.radius_deg + 0.2, m.el_deg + scene.markers.radius_deg + 0.2)
                .expect("still on panel near center rows");
            assert_eq!(rho_bg, scene.markers.rho_panel_bg);
        }
    }

    #[test]
    fn marker_positions_distinct() {
        let scene = TargetScene::default();
        let markers = scene.marker_positions();
        for (i, a) in markers.iter().enumerate() {
            for b in markers.iter().skip(i + 1) {
                assert!(
                    (a.az_deg - b.az_deg).abs() > 1e-9 || (a.el_deg - b.el_deg).abs() > 1e-9,
                    "duplicate marker position"
                );
            }
        }
    }

    #[test]
    fn every_column_crosses_a_bright_target_during_sweep() {
        // the dead-pixel rule needs every pixel to see a target with
        // rho >= 0.18 at some sweep position
        let scene = TargetScene::default();
        let k = Intrinsics::default();
        for u in 0..128 {
            let mut best_rho: f64 = 0.0;
            for i in 0..=128 {
                let phi = -60.0 + i as f64 * 0.9375;
                if let Some(hit) = raycast(u as f64, k.cy, phi, &scene, &k) {
                    best_rho = best_rho.max(hit.rho);
                }
            }
            assert!(best_rho >= 0.18, "column {u} never sees a bright target");
        }
    }

    #[test]
    fn edge_blending_produces_intermediate_rho() {
        let scene = TargetScene::default();
        let k = Intrinsics::default();
        // scan across the 0.50 / 0.80 stripe boundary at az = 5 deg and
        // look for at least one blended pixel
        let mut seen_blend = false;
        for i in 0..40 {
            let phi = 4.0 + i as f64 * 0.05;
            if let Some(hit) = raycast(k.cx, k.cy, phi, &scene, &k) {
                if hit.rho > 0.50 + 1e-6 && hit.rho < 0.80 - 1e-6 {
                    seen_blend = true;
                }
            }
        }
        assert!(seen_blend, "no edge blending observed across stripe boundary");
    }
}
