use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sandsim_core::raster::{render, RasterOptions};
use sandsim_core::{Painting, Stroke};
use sandsim_physics::{lift_stroke, mpm_step, p2g, render_3d, CanvasStyle, LiftConfig, SandParticle, SandState, SimConfig};

fn random_cloud(state: &SandState, n: usize, seed: u64, speed: f64) -> Vec<SandParticle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dx = state.dx();
    let d = state.grid.dims;
    let center = Vector3::new(d[0] as f64, d[1] as f64, d[2] as f64) * dx * 0.5;
    let drift = Vector3::new(0.3, -0.2, 0.1) * speed;
    (0..n)
        .map(|_| {
            let off = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * (6.0 * dx);
            let mass = 1e-4 * (0.5 + rng.random::<f64>());
            let mut p = SandParticle::at_rest(center + off, mass, mass / 1600.0, 0);
            p.velocity = drift
                + Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * speed;
            p.f_elastic = Matrix3::identity() + Matrix3::from_fn(|_, _| (rng.random::<f64>() - 0.5) * 0.02);
            p
        })
        .collect()
}

#[test]
fn p2g_conserves_mass() {
    for seed in 0..5 {
        let mut s = SandState::new(SimConfig::default(), 0.01).unwrap();
        s.particles = random_cloud(&s, 2000, seed, 0.5);
        p2g(&mut s, 1e-4);
        let particle_mass = s.total_mass();
        let rel = (s.grid.total_mass() - particle_mass).abs() / particle_mass;
        assert!(rel <= 1e-10, "relative mass error {rel:e}");
    }
}

#[test]
fn momentum_is_conserved_without_gravity_or_boundaries() {
    let cfg = SimConfig {
        gravity: [0.0; 3],
        boundaries: false,
        dt: 1e-4,
        ..SimConfig::default()
    };
    for seed in 0..3 {
        let mut s = SandState::new(cfg, 0.01).unwrap();
        s.particles = random_cloud(&s, 1500, 100 + seed, 0.2);
        let p0 = s.total_momentum();
        for _ in 0..100 {
            let r = mpm_step(&mut s);
            assert_eq!(r.escaped, 0);
        }
        let rel = (s.total_momentum() - p0).norm() / p0.norm();
        assert!(rel <= 1e-6, "relative momentum drift {rel:e}");
    }
}

#[test]
fn dropped_column_settles() {
    let cfg = SimConfig {
        grid: [32, 32, 32],
        ..SimConfig::default()
    };
    let dx = 0.01;
    let mut s = SandState::new(cfg, dx).unwrap();
    let base = Vector3::new(16.0 * dx, 16.0 * dx, 8.0 * dx);
    let h = 0.5 * dx;
    let mass = 1600.0 * h.powi(3);
    for i in 0..10 {
        for j in 0..10 {
            for k in 0..10 {
                let off = Vector3::new(i as f64 - 4.5, j as f64 - 4.5, k as f64) * h;
                s.particles.push(SandParticle::at_rest(base + off, mass, h.powi(3), 0));
            }
        }
    }
    let mut peak: f64 = 0.0;
    let mut settled_at = None;
    for step in 0..5000 {
        mpm_step(&mut s);
        let ke = s.kinetic_energy();
        peak = peak.max(ke);
        if step > 10 && ke < 1e-4 * peak {
            settled_at = Some(step);
            break;
        }
    }
    assert!(settled_at.is_some(), "kinetic energy never fell below 1e-4 of its peak {peak:e}: final {:e}", s.kinetic_energy());
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn lifted_stroke_renders_like_the_2d_stroke() {
    let mut painting = Painting::new(128, 128);
    let centers: Vec<[f64; 2]> = (0..20)
        .map(|i| {
            let t = i as f64 / 19.0;
            [20.0 + 85.0 * t, 40.0 + 45.0 * t + 15.0 * (t * 3.0).sin()]
        })
        .collect();
    painting.strokes.push(Stroke::from_centers(0, [4.0, 2.5], 0.6, &centers));
    let lift = LiftConfig::default();
    let mut s = SandState::for_canvas(128, 128, SimConfig::default(), &lift).unwrap();
    let origin = Vector3::repeat(s.floor_z());
    s.particles = lift_stroke(&painting.strokes[0], &lift, 1600.0, 11)
        .unwrap()
        .into_iter()
        .map(|mut p| {
            p.position += origin;
            p
        })
        .collect();
    let img3 = render_3d(&s, CanvasStyle::from(&painting), &lift, 128, 128);
    let img2 = render(&painting, None, &RasterOptions::default()).image;
    let r = pearson(&img2.luma(), &img3.luma());
    assert!(r >= 0.9, "pearson {r}");
}
