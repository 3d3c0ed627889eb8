use diffcore::Tensor;
use ivus_core::dataset::{load_dataset, read_manifest, write_dataset};
use ivus_core::geometry::Point;
use ivus_core::labels::{LUMEN, PLAQUE, TISSUE};
use ivus_core::phantom::{
    generate_phantom, make_dataset, phantom_geometry, profile_line, Dataset, PhantomSpec,
};

fn noise_free() -> PhantomSpec {
    PhantomSpec::default().noise_free()
}

#[test]
fn noise_free_regions_are_constant() {
    let spec = noise_free();
    for index in 0..10 {
        let s = generate_phantom(&spec, index).unwrap();
        for class in [LUMEN, PLAQUE, TISSUE] {
            let vals: Vec<f32> = s
                .labels
                .data()
                .iter()
                .zip(s.condition.data())
                .filter(|(&c, _)| c == class)
                .map(|(_, &v)| v)
                .collect();
            assert!(!vals.is_empty());
            let mean = vals.iter().map(|&v| v as f64).sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert_eq!(var, 0.0, "class {class} of sample {index}");
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = PhantomSpec {
        seed: 99,
        calcification_probability: 1.0,
        ..Default::default()
    };
    let a = generate_phantom(&spec, 7).unwrap();
    let b = generate_phantom(&spec, 7).unwrap();
    assert_eq!(a, b);
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.condition), bits(&b.condition));
    assert_ne!(a.condition, generate_phantom(&spec, 8).unwrap().condition);
}

#[test]
fn label_areas_match_contour_areas() {
    let spec = PhantomSpec::default();
    for index in 0..50 {
        let s = generate_phantom(&spec, index).unwrap();
        let lumen = s.labels.count(LUMEN) as f64;
        let vessel = lumen + s.labels.count(PLAQUE) as f64;
        let lu = s.lu_contour.area();
        let ma = s.ma_contour.area();
        assert!((lumen - lu).abs() / lu < 0.02, "sample {index}: lumen {lumen} vs {lu}");
        assert!((vessel - ma).abs() / ma < 0.02, "sample {index}: vessel {vessel} vs {ma}");
    }
}

#[test]
fn samples_satisfy_invariants_and_class_balance() {
    let spec = PhantomSpec {
        calcification_probability: 0.5,
        ..Default::default()
    };
    for index in 0..50 {
        let s = generate_phantom(&spec, index).unwrap();
        s.check_invariants().unwrap();
        let total = (s.size() * s.size()) as f64;
        for class in [LUMEN, PLAQUE, TISSUE] {
            assert!(s.labels.count(class) as f64 / total >= 0.02, "sample {index} class {class}");
        }
        assert!(s.condition.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(s.lu_contour.signed_area() > 0.0 && s.ma_contour.signed_area() > 0.0);
    }
}

#[test]
fn profile_of_constant_image_is_constant() {
    let img = Tensor::full(vec![1, 16, 16], 0.25f32);
    let p = profile_line(&img, Point::new(7.5, 7.5), 0.7, 7.0, 33).unwrap();
    assert_eq!(p.len(), 33);
    assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-7));
}

#[test]
fn single_sample_profile_reads_the_center() {
    let img = Tensor::from_fn(vec![1, 4, 4], |i| i as f32);
    // Bilinear at (1.5, 2.0): mean of pixels (1,2)=9 and (2,2)=10.
    let p = profile_line(&img, Point::new(1.5, 2.0), 1.0, 3.0, 1).unwrap();
    assert_eq!(p, vec![9.5]);
}

#[test]
fn profile_leaving_the_image_is_an_error() {
    let img = Tensor::full(vec![1, 8, 8], 0.0f32);
    assert!(profile_line(&img, Point::new(4.0, 4.0), 0.0, 5.0, 10).is_err());
    assert!(profile_line(&img, Point::new(4.0, 4.0), 0.0, 3.0, 10).is_ok());
}

/// Index of the first sample after which the profile rises through `level`.
fn rising(p: &[f64], level: f64) -> Option<usize> {
    (0..p.len() - 1).find(|&i| p[i] < level && p[i + 1] >= level)
}

/// Index of the first sample after which the profile falls through `level`.
fn falling(p: &[f64], level: f64) -> Option<usize> {
    (0..p.len() - 1).find(|&i| p[i] > level && p[i + 1] <= level)
}

#[test]
fn noise_free_profile_steps_at_analytic_radii() {
    let spec = noise_free();
    let (lumen, plaque, tissue) = (2.0 * 0.08 - 1.0, 2.0 * 0.72 - 1.0, 2.0 * 0.38 - 1.0);
    for index in 0..20 {
        let s = generate_phantom(&spec, index).unwrap();
        let geo = phantom_geometry(&spec, index).unwrap();
        for k in 0..8 {
            let angle = k as f64 * std::f64::consts::TAU / 8.0 + 0.1;
            let r_ma = geo.outer_radius(angle);
            let length = (r_ma + 4.0).floor();
            let n = length as usize + 1;
            let p = profile_line(&s.condition, s.center, angle, length, n).unwrap();
            // Runs of consecutive changing samples; each boundary makes one.
            let mut jumps = 0;
            let mut in_jump = false;
            for w in p.windows(2) {
                let changing = (w[1] - w[0]).abs() > 1e-6;
                if changing && !in_jump {
                    jumps += 1;
                }
                in_jump = changing;
            }
            assert_eq!(jumps, 2, "sample {index} angle {angle}: {p:?}");
            let lu_at = rising(&p, 0.5 * (lumen + plaque)).unwrap() as f64;
            let ma_at = falling(&p, 0.5 * (plaque + tissue)).unwrap() as f64;
            assert!((lu_at + 0.5 - geo.lumen_radius(angle)).abs() <= 1.5, "lu {lu_at}");
            assert!((ma_at + 0.5 - r_ma).abs() <= 1.5, "ma {ma_at}");
        }
    }
}

#[test]
fn make_dataset_splits_are_disjoint_and_reproducible() {
    let spec = PhantomSpec::default();
    let d = make_dataset(&spec, 2, 1, 1).unwrap();
    let idx: Vec<u64> = d.train.iter().chain(&d.val).chain(&d.test).map(|s| s.index).collect();
    assert_eq!(idx, vec![0, 1, 2, 3]);
    let again = Dataset::from_manifest(&d.manifest).unwrap();
    assert_eq!(again.train, d.train);
    assert_eq!(again.test, d.test);
    for s in d.train.iter().chain(&d.val).chain(&d.test) {
        s.check_invariants().unwrap();
    }
    assert!(make_dataset(&spec, 0, 1, 1).is_err());
}

#[test]
fn dataset_on_disk_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = make_dataset(&PhantomSpec::default(), 3, 1, 2).unwrap();
    let m = write_dataset(dir.path(), &d).unwrap();
    assert_eq!(m.files.len(), 6 * 4);
    assert_eq!(read_manifest(dir.path()).unwrap(), m);
    let first = std::fs::read(dir.path().join("train/00000_image.pgm")).unwrap();
    write_dataset(dir.path(), &d).unwrap();
    assert_eq!(std::fs::read(dir.path().join("train/00000_image.pgm")).unwrap(), first);
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.val, d.val);
}
