use crate::error::{Error, Result};
use crate::gaussians::SceneGradients;
use crate::rasterizer::project::{project_one, rotation_unit, M3, MAX_ALPHA};
use crate::rasterizer::render::{RenderOutput, TILE};

#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean: [f64; 2],
    /// dL/dQ for the conic as a full symmetric matrix (q00, q01, q11).
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

/// Gradients of `Σ image_grad · image` with respect to every scene
/// attribute. The depth order is held fixed.
pub fn render_backward(output: &RenderOutput, image_grad: &[f32]) -> Result<SceneGradients> {
    let rec = output
        .records
        .as_ref()
        .ok_or_else(|| Error::State("render output has no blend records".into()))?;
    let cam = &rec.camera;
    let (w, h) = (cam.width, cam.height);
    if image_grad.len() != cam.pixels() * 3 {
        return Err(Error::dim(
            "render_backward",
            format!("image gradient has {} values, image {}×{}×3", image_grad.len(), w, h),
        ));
    }
    let bg = rec.settings.background.map(|v| v as f64);
    let mut screen = vec![ScreenGrad::default(); rec.projected.len()];
    for ty in 0..h.div_ceil(TILE) {
        for tx in 0..rec.tiles_x {
            let list = &rec.tile_lists[(ty * rec.tiles_x + tx) as usize];
            for py in ty * TILE..((ty + 1) * TILE).min(h) {
                for px in tx * TILE..((tx + 1) * TILE).min(w) {
                    let pix = (py * w + px) as usize;
                    let dpix = [0, 1, 2].map(|c| image_grad[pix * 3 + c] as f64);
                    if dpix == [0.0; 3] {
                        continue;
                    }
                    let t_final = rec.final_t[pix];
                    let bg_dot: f64 = (0..3).map(|c| bg[c] * dpix[c]).sum();
                    let mut t = t_final;
                    let mut accum = [0f64; 3];
                    let mut last_alpha = 0f64;
                    let mut last_color = [0f64; 3];
                    for k in (0..rec.n_contrib[pix] as usize).rev() {
                        let pos = list[k] as usize;
                        let g = &rec.projected[pos];
                        let (fx, fy) = (px as f64, py as f64);
                        let Some((o, raw, gauss)) = g.alpha_at(fx, fy) else {
                            continue;
                        };
                        t /= 1.0 - o;
                        let sg = &mut screen[pos];
                        let mut dl_do = 0.0;
                        for c in 0..3 {
                            sg.color[c] += o * t * dpix[c];
                            accum[c] = last_alpha * last_color[c] + (1.0 - last_alpha) * accum[c];
                            dl_do += (g.color[c] - accum[c]) * dpix[c];
                        }
                        dl_do = dl_do * t - t_final / (1.0 - o) * bg_dot;
                        last_alpha = o;
                        last_color = g.color;
                        if raw > MAX_ALPHA {
                            continue;
                        }
                        sg.opacity += gauss * dl_do;
                        let dl_dpower = g.opacity * gauss * dl_do;
                        let dx = fx - g.mean2d[0];
                        let dy = fy - g.mean2d[1];
                        let [a, b, c] = g.conic;
                        sg.mean[0] += dl_dpower * (a * dx + b * dy);
                        sg.mean[1] += dl_dpower * (b * dx + c * dy);
                        sg.conic[0] += dl_dpower * (-0.5 * dx * dx);
                        sg.conic[1] += dl_dpower * (-0.5 * dx * dy);
                        sg.conic[2] += dl_dpower * (-0.5 * dy * dy);
                    }
                }
            }
        }
    }

    let scene = &rec.scene;
    let mut out = SceneGradients::zeros(scene.len());
    for (g, sg) in rec.projected.iter().zip(&screen) {
        let i = g.index;
        out.color[i] = sg.color.map(|v| v as f32);
        out.opacity[i] = sg.opacity as f32;
        let (dmu, dscale, drot) = project_backward(rec, i, g.conic, sg);
        out.mu[i] = dmu;
        out.scale[i] = dscale;
        out.rot[i] = drot;
    }
    Ok(out)
}

fn mat2(s: [f64; 3]) -> [[f64; 2]; 2] {
    [[s[0], s[1]], [s[1], s[2]]]
}

fn mul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
}

/// Chain screen-space gradients through the EWA projection.
fn project_backward(
    rec: &crate::rasterizer::render::BlendRecords,
    i: usize,
    conic: [f64; 3],
    sg: &ScreenGrad,
) -> ([f32; 3], [f32; 3], [f32; 4]) {
    let scene = &rec.scene;
    let cam = &rec.camera;
    let pr = project_one(scene, cam, i, rec.settings.low_pass);
    let q = mat2(conic);
    // Q = cov⁻¹ ⇒ dL/dcov = −Q·(dL/dQ)·Q.
    let gq = mat2(sg.conic);
    let qgq = mul2(mul2(q, gq), q);
    let gcov = qgq.map(|r| r.map(|v| -v));

    let t = pr.jw;
    let sigma = pr.sigma;
    // cov = T Σ Tᵀ: dL/dΣ = Tᵀ G T, dL/dT = 2 G T Σ.
    let dsigma: M3 = std::array::from_fn(|k| {
        std::array::from_fn(|l| {
            (0..2)
                .map(|r| (0..2).map(|c| t[r][k] * gcov[r][c] * t[c][l]).sum::<f64>())
                .sum()
        })
    });
    let gt: [[f64; 3]; 2] = std::array::from_fn(|r| {
        std::array::from_fn(|l| {
            2.0 * (0..2)
                .map(|c| gcov[r][c] * (0..3).map(|k| t[c][k] * sigma[k][l]).sum::<f64>())
                .sum::<f64>()
        })
    });
    let wr = cam.rotation();
    // T = J W ⇒ dL/dJ = dL/dT · Wᵀ.
    let gj: [[f64; 3]; 2] =
        std::array::from_fn(|r| std::array::from_fn(|k| (0..3).map(|c| gt[r][c] * wr[k][c]).sum()));

    let [x, y, z] = pr.p;
    let (fx, fy) = (cam.fx as f64, cam.fy as f64);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut dp = [0f64; 3];
    // Mean projection.
    dp[0] += sg.mean[0] * fx / z;
    dp[1] += sg.mean[1] * fy / z;
    dp[2] += -sg.mean[0] * fx * x / z2 - sg.mean[1] * fy * y / z2;
    // Jacobian entries: J00 = fx/z, J02 = −fx x/z², J11 = fy/z, J12 = −fy y/z².
    dp[2] += gj[0][0] * (-fx / z2) + gj[1][1] * (-fy / z2);
    dp[0] += gj[0][2] * (-fx / z2);
    dp[2] += gj[0][2] * (2.0 * fx * x / z3);
    dp[1] += gj[1][2] * (-fy / z2);
    dp[2] += gj[1][2] * (2.0 * fy * y / z3);
    let dmu: [f32; 3] = std::array::from_fn(|k| (0..3).map(|r| wr[r][k] * dp[r]).sum::<f64>() as f32);

    // Σ = M Mᵀ, M = R diag(s).
    let s = scene.scale()[i].map(|v| v as f64);
    let qr = scene.rot()[i].map(|v| v as f64);
    let norm = qr.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [qw, qx, qy, qz] = qr.map(|v| v / norm);
    let r = rotation_unit(qw, qx, qy, qz);
    let m: M3 = std::array::from_fn(|a| std::array::from_fn(|b| r[a][b] * s[b]));
    let dsym: M3 = std::array::from_fn(|a| std::array::from_fn(|b| 0.5 * (dsigma[a][b] + dsigma[b][a])));
    let dm: M3 = std::array::from_fn(|a| {
        std::array::from_fn(|b| 2.0 * (0..3).map(|k| dsym[a][k] * m[k][b]).sum::<f64>())
    });
    let dscale: [f32; 3] = std::array::from_fn(|b| (0..3).map(|a| dm[a][b] * r[a][b]).sum::<f64>() as f32);
    let dr: M3 = std::array::from_fn(|a| std::array::from_fn(|b| dm[a][b] * s[b]));
    let (w2, x2, y2, z2q) = (2.0 * qw, 2.0 * qx, 2.0 * qy, 2.0 * qz);
    let dr_dw = [[0.0, -z2q, y2], [z2q, 0.0, -x2], [-y2, x2, 0.0]];
    let dr_dx = [[0.0, y2, z2q], [y2, -2.0 * x2, -w2], [z2q, w2, -2.0 * x2]];
    let dr_dy = [[-2.0 * y2, x2, w2], [x2, 0.0, z2q], [-w2, z2q, -2.0 * y2]];
    let dr_dz = [[-2.0 * z2q, -w2, x2], [w2, -2.0 * z2q, y2], [x2, y2, 0.0]];
    let contract = |d: M3| -> f64 { (0..3).map(|a| (0..3).map(|b| d[a][b] * dr[a][b]).sum::<f64>()).sum() };
    let dunit = [contract(dr_dw), contract(dr_dx), contract(dr_dy), contract(dr_dz)];
    let u = [qw, qx, qy, qz];
    let dot: f64 = (0..4).map(|k| u[k] * dunit[k]).sum();
    let drot: [f32; 4] = std::array::from_fn(|k| ((dunit[k] - u[k] * dot) / norm) as f32);
    (dmu, dscale, drot)
}
