use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use sandsim_physics::{drucker_prager_project, freeze_filter, lift_density, smear, SandParticle};

fn deformation() -> impl Strategy<Value = Matrix3<f64>> {
    (
        prop::array::uniform3(-0.4f64..0.4),
        prop::array::uniform3(-3.0f64..3.0),
        prop::array::uniform3(-3.0f64..3.0),
    )
        .prop_map(|(eps, a, b)| {
            let u = Rotation3::from_euler_angles(a[0], a[1], a[2]).into_inner();
            let v = Rotation3::from_euler_angles(b[0], b[1], b[2]).into_inner();
            u * Matrix3::from_diagonal(&Vector3::from(eps).map(f64::exp)) * v.transpose()
        })
}

fn particles() -> impl Strategy<Value = Vec<SandParticle>> {
    prop::collection::vec((prop::array::uniform3(-1.0f64..1.0), prop::array::uniform3(-0.2f64..0.2)), 1..40).prop_map(|v| {
        v.into_iter()
            .map(|(x, vel)| {
                let mut p = SandParticle::at_rest(Vector3::from(x), 1.0, 1.0, 0);
                p.velocity = Vector3::from(vel);
                p
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn projection_is_idempotent(f in deformation(), phi_deg in 20.0f64..50.0) {
        let phi = phi_deg.to_radians();
        let once = drucker_prager_project(&f, phi).unwrap();
        let twice = drucker_prager_project(&once, phi).unwrap();
        prop_assert!((twice - once).abs().max() < 1e-9);
        prop_assert!(once.determinant() > 0.0);
    }

    #[test]
    fn density_is_strictly_increasing(a in 0.0f64..0.999, d in 1e-3f64..1e-2) {
        let b = (a + d).min(1.0);
        prop_assert!(lift_density(a).unwrap() < lift_density(b).unwrap());
    }

    #[test]
    fn tools_ignore_particle_order(ps in particles(), shift in 0usize..40) {
        let center = Vector3::new(0.1, -0.2, 0.0);
        let mut a = ps.clone();
        let mut b = ps;
        let k = shift % b.len();
        b.rotate_left(k);
        smear(&mut a, center, 0.7, 1.5, Vector3::new(1.0, 1.0, 0.0));
        smear(&mut b, center, 0.7, 1.5, Vector3::new(1.0, 1.0, 0.0));
        freeze_filter(&mut a, center, 0.9, 0.3);
        freeze_filter(&mut b, center, 0.9, 0.3);
        b.rotate_right(k);
        prop_assert_eq!(a, b);
    }
}
