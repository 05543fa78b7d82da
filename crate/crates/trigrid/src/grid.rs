//! Tri-grid scene representation and its differentiable feature sampler.
//!
//! A tri-grid stores three stacks of `D` feature planes (shape D x H x W x C
//! per stack), one stack per axis-aligned plane family. A 3D point is looked
//! up by trilinear interpolation in each stack (bilinear in-plane, linear
//! across the plane stack along the orthogonal axis) and the three C-vectors
//! are summed. With D = 1 the depth interpolation degenerates and the
//! structure is exactly a tri-plane.

use crate::error::{Error, Result};
use crate::raster::lerp;

/// Axis-aligned bounding box of the scene, default [-1,1]^3.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }
}

impl Bounds {
    pub fn cube(half: f64) -> Self {
        Bounds {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    /// Normalize a world coordinate into [-1, 1], clamped at the faces.
    /// Returns (normalized, in_interior) per axis; the flag is false when the
    /// clamp was active, which zeroes the point gradient along that axis.
    #[inline]
    fn normalize_axis(&self, axis: usize, p: f64) -> (f64, bool) {
        let n = (p - self.min[axis]) / self.extent(axis) * 2.0 - 1.0;
        if n <= -1.0 {
            (-1.0, false)
        } else if n >= 1.0 {
            (1.0, false)
        } else {
            (n, true)
        }
    }
}

/// In-plane axes (u, v) and stacking axis for each of the three plane stacks.
/// Stack 0 spans (x, y) stacked along z; stack 1 spans (y, z) stacked along
/// x; stack 2 spans (x, z) stacked along y.
const STACK_AXES: [[usize; 3]; 3] = [[0, 1, 2], [1, 2, 0], [0, 2, 1]];

/// Three stacks of D feature planes of shape H x W x C each.
///
/// Plane storage is row-major `[d][v][u][c]` per stack.
#[derive(Debug, Clone, PartialEq)]
pub struct TriGrid {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub bounds: Bounds,
    pub stacks: [Vec<f64>; 3],
}

impl TriGrid {
    pub fn zeros(depth: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        if depth < 1 || height < 2 || width < 2 || channels < 1 {
            return Err(Error::invalid_input(format!(
                "tri-grid dimensions out of range: D={depth} H={height} W={width} C={channels}"
            )));
        }
        let n = depth * height * width * channels;
        Ok(TriGrid {
            depth,
            height,
            width,
            channels,
            bounds: Bounds::default(),
            stacks: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        })
    }

    pub fn stack_len(&self) -> usize {
        self.depth * self.height * self.width * self.channels
    }

    pub fn param_count(&self) -> usize {
        3 * self.stack_len()
    }

    #[inline]
    pub fn node_index(&self, d: usize, v: usize, u: usize) -> usize {
        ((d * self.height + v) * self.width + u) * self.channels
    }

    /// Continuous in-plane grid coordinate for a normalized value in [-1,1].
    /// Nodes sit at cell centers, so the mapping is (n+1)/2 * W - 0.5 with the
    /// border half-cells replicating the edge node.
    #[inline]
    fn inplane_coord(n: f64, size: usize) -> (usize, f64, bool) {
        let g = (n + 1.0) * 0.5 * size as f64 - 0.5;
        let max = (size - 1) as f64;
        if g <= 0.0 {
            (0, 0.0, false)
        } else if g >= max {
            (size - 2, 1.0, false)
        } else {
            let i0 = g.floor() as usize;
            let i0 = i0.min(size - 2);
            (i0, g - i0 as f64, true)
        }
    }

    /// Depth-station coordinate: D stations uniformly spaced over [-1,1]
    /// inclusive of the endpoints. D = 1 collapses to the single plane.
    #[inline]
    fn depth_coord(n: f64, depth: usize) -> (usize, usize, f64, bool) {
        if depth == 1 {
            return (0, 0, 0.0, false);
        }
        let g = (n + 1.0) * 0.5 * (depth - 1) as f64;
        let max = (depth - 1) as f64;
        if g <= 0.0 {
            (0, 1, 0.0, true)
        } else if g >= max {
            (depth - 2, depth - 1, 1.0, true)
        } else {
            let d0 = (g.floor() as usize).min(depth - 2);
            (d0, d0 + 1, g - d0 as f64, true)
        }
    }

    /// Forward lookup of one stack at a normalized point, accumulated into `out`.
    #[inline]
    fn sample_stack_into(&self, stack: usize, n: [f64; 3], out: &mut [f64]) {
        let [ua, va, da] = STACK_AXES[stack];
        let (u0, fu, _) = Self::inplane_coord(n[ua], self.width);
        let (v0, fv, _) = Self::inplane_coord(n[va], self.height);
        let (d0, d1, fd, interp_depth) = Self::depth_coord(n[da], self.depth);
        let planes = &self.stacks[stack];
        let c = self.channels;
        let bilinear = |d: usize, ch: usize| -> f64 {
            let c00 = planes[self.node_index(d, v0, u0) + ch];
            let c10 = planes[self.node_index(d, v0, u0 + 1) + ch];
            let c01 = planes[self.node_index(d, v0 + 1, u0) + ch];
            let c11 = planes[self.node_index(d, v0 + 1, u0 + 1) + ch];
            lerp(lerp(c00, c10, fu), lerp(c01, c11, fu), fv)
        };
        for ch in 0..c {
            let val = if interp_depth {
                lerp(bilinear(d0, ch), bilinear(d1, ch), fd)
            } else {
                bilinear(d0, ch)
            };
            out[ch] += val;
        }
    }

    /// Sample the summed tri-grid feature at a single world point.
    /// Out-of-bounds points are clamped to the boundary.
    pub fn sample_point(&self, point: [f64; 3]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        self.sample_point_into(point, &mut out)?;
        Ok(out)
    }

    pub fn sample_point_into(&self, point: [f64; 3], out: &mut [f64]) -> Result<()> {
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid_input("sample point has non-finite coordinate"));
        }
        if out.len() != self.channels {
            return Err(Error::invalid_input(format!(
                "feature buffer width {} != channels {}",
                out.len(),
                self.channels
            )));
        }
        out.fill(0.0);
        let mut n = [0.0; 3];
        for a in 0..3 {
            n[a] = self.bounds.normalize_axis(a, point[a]).0;
        }
        for s in 0..3 {
            self.sample_stack_into(s, n, out);
        }
        Ok(())
    }

    /// Sample a batch of world points, returning one C-vector per point.
    pub fn sample_features(&self, points: &[[f64; 3]]) -> Result<Vec<Vec<f64>>> {
        points.iter().map(|&p| self.sample_point(p)).collect()
    }

    /// Reverse-mode sampling: scatter `upstream` (one C-vector per point) into
    /// per-stack plane gradients and produce the gradient of the summed
    /// feature with respect to each world point.
    ///
    /// `plane_grads` must have the same layout as `stacks`; gradients are
    /// accumulated, not overwritten.
    pub fn sample_features_backward(
        &self,
        points: &[[f64; 3]],
        upstream: &[Vec<f64>],
        plane_grads: &mut [Vec<f64>; 3],
        point_grads: &mut Vec<[f64; 3]>,
    ) -> Result<()> {
        if upstream.len() != points.len() {
            return Err(Error::invalid_input(
                "upstream gradient count does not match point count",
            ));
        }
        for g in plane_grads.iter() {
            if g.len() != self.stack_len() {
                return Err(Error::invalid_input("plane gradient buffer size mismatch"));
            }
        }
        point_grads.clear();
        point_grads.resize(points.len(), [0.0; 3]);
        let mut scratch = [0.0f64; 3];
        for (i, (&p, up)) in points.iter().zip(upstream).enumerate() {
            if up.len() != self.channels {
                return Err(Error::invalid_input(format!(
                    "upstream gradient width {} != channels {}",
                    up.len(),
                    self.channels
                )));
            }
            self.backward_point(p, up, plane_grads, &mut scratch)?;
            point_grads[i] = scratch;
        }
        Ok(())
    }

    /// Backward for a single point; `point_grad` receives d(up . feature)/d point.
    pub(crate) fn backward_point(
        &self,
        point: [f64; 3],
        upstream: &[f64],
        plane_grads: &mut [Vec<f64>; 3],
        point_grad: &mut [f64; 3],
    ) -> Result<()> {
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid_input("sample point has non-finite coordinate"));
        }
        let mut n = [0.0; 3];
        let mut interior = [false; 3];
        for a in 0..3 {
            let (na, inner) = self.bounds.normalize_axis(a, point[a]);
            n[a] = na;
            interior[a] = inner;
        }
        *point_grad = [0.0; 3];
        let c = self.channels;
        for s in 0..3 {
            let [ua, va, da] = STACK_AXES[s];
            let (u0, fu, u_inner) = Self::inplane_coord(n[ua], self.width);
            let (v0, fv, v_inner) = Self::inplane_coord(n[va], self.height);
            let (d0, d1, fd, interp_depth) = Self::depth_coord(n[da], self.depth);
            let planes = &self.stacks[s];
            let grads = &mut plane_grads[s];
            // Chain factors from world coordinate to continuous grid coordinate;
            // zero wherever a clamp was active.
            let du_dx = if u_inner && interior[ua] {
                self.width as f64 / self.bounds.extent(ua)
            } else {
                0.0
            };
            let dv_dy = if v_inner && interior[va] {
                self.height as f64 / self.bounds.extent(va)
            } else {
                0.0
            };
            let dd_dz = if interp_depth && interior[da] && self.depth > 1 {
                (self.depth - 1) as f64 / self.bounds.extent(da)
            } else {
                0.0
            };
            let (w_d0, w_d1) = if interp_depth {
                (1.0 - fd, fd)
            } else {
                (1.0, 0.0)
            };
            let mut g_u = 0.0;
            let mut g_v = 0.0;
            let mut g_d = 0.0;
            for ch in 0..c {
                let g = upstream[ch];
                if g == 0.0 {
                    continue;
                }
                let w00 = (1.0 - fu) * (1.0 - fv);
                let w10 = fu * (1.0 - fv);
                let w01 = (1.0 - fu) * fv;
                let w11 = fu * fv;
                let i00 = self.node_index(d0, v0, u0) + ch;
                let i10 = self.node_index(d0, v0, u0 + 1) + ch;
                let i01 = self.node_index(d0, v0 + 1, u0) + ch;
                let i11 = self.node_index(d0, v0 + 1, u0 + 1) + ch;
                grads[i00] += g * w00 * w_d0;
                grads[i10] += g * w10 * w_d0;
                grads[i01] += g * w01 * w_d0;
                grads[i11] += g * w11 * w_d0;
                let c00 = planes[i00];
                let c10 = planes[i10];
                let c01 = planes[i01];
                let c11 = planes[i11];
                let mut dval_du = ((c10 - c00) * (1.0 - fv) + (c11 - c01) * fv) * w_d0;
                let mut dval_dv = (lerp(c01, c11, fu) - lerp(c00, c10, fu)) * w_d0;
                if interp_depth {
                    let j00 = self.node_index(d1, v0, u0) + ch;
                    let j10 = self.node_index(d1, v0, u0 + 1) + ch;
                    let j01 = self.node_index(d1, v0 + 1, u0) + ch;
                    let j11 = self.node_index(d1, v0 + 1, u0 + 1) + ch;
                    grads[j00] += g * w00 * w_d1;
                    grads[j10] += g * w10 * w_d1;
                    grads[j01] += g * w01 * w_d1;
                    grads[j11] += g * w11 * w_d1;
                    let e00 = planes[j00];
                    let e10 = planes[j10];
                    let e01 = planes[j01];
                    let e11 = planes[j11];
                    dval_du += ((e10 - e00) * (1.0 - fv) + (e11 - e01) * fv) * w_d1;
                    dval_dv += (lerp(e01, e11, fu) - lerp(e00, e10, fu)) * w_d1;
                    let bilin0 = lerp(lerp(c00, c10, fu), lerp(c01, c11, fu), fv);
                    let bilin1 = lerp(lerp(e00, e10, fu), lerp(e01, e11, fu), fv);
                    g_d += g * (bilin1 - bilin0);
                }
                g_u += g * dval_du;
                g_v += g * dval_dv;
            }
            point_grad[ua] += g_u * du_dx;
            point_grad[va] += g_v * dv_dy;
            point_grad[da] += g_d * dd_dz;
        }
        Ok(())
    }

    /// World coordinate of an in-plane node index along the given axis.
    pub fn node_coord(&self, axis_size: usize, i: usize, axis: usize) -> f64 {
        let n = -1.0 + (2.0 * i as f64 + 1.0) / axis_size as f64;
        self.bounds.min[axis] + (n + 1.0) * 0.5 * self.bounds.extent(axis)
    }

    /// World coordinate of a depth station along the given axis.
    pub fn station_coord(&self, d: usize, axis: usize) -> f64 {
        let n = if self.depth == 1 {
            0.0
        } else {
            -1.0 + 2.0 * d as f64 / (self.depth - 1) as f64
        };
        self.bounds.min[axis] + (n + 1.0) * 0.5 * self.bounds.extent(axis)
    }
}
