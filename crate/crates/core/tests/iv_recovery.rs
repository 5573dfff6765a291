use superstar_core::econometrics::{estimate, RegressionSpec};
use superstar_core::model::{simulate_endogenous, EndogenousConfig};

fn spec(endogenous: bool) -> RegressionSpec {
    let mut s = RegressionSpec {
        dependent: "phi".into(),
        fe_dims: ["sector3", "province", "island", "year"].map(String::from).to_vec(),
        cluster: "firm_id".into(),
        ..RegressionSpec::default()
    };
    if endogenous {
        s.endogenous = vec!["hspill".into()];
        s.instruments = vec!["lab_bartik".into()];
    } else {
        s.exogenous = vec!["hspill".into()];
    }
    s
}

#[test]
fn iv_corrects_confounded_exposure() {
    let reps = 200;
    let (mut biased, mut covered, mut strong) = (0, 0, 0);
    for rep in 0..reps {
        let cfg = EndogenousConfig {
            seed: 1000 + rep,
            ..EndogenousConfig::default()
        };
        let s = simulate_endogenous(&cfg).unwrap();
        let f = s.frame().unwrap();
        let mut o = spec(false);
        o.sample_filter = Some(superstar_core::econometrics::SampleFilter {
            column: "non_superstar".into(),
            equals: 1.0,
        });
        let ols = estimate(&f, &o).unwrap();
        let mut i = spec(true);
        i.sample_filter = o.sample_filter.clone();
        let iv = estimate(&f, &i).unwrap();
        let (b, se) = (ols.coefficient("hspill").unwrap(), ols.std_error("hspill").unwrap());
        if (b - s.alpha).abs() >= 3.0 * se {
            biased += 1;
        }
        let (b, se) = (iv.coefficient("hspill").unwrap(), iv.std_error("hspill").unwrap());
        if (b - s.alpha).abs() <= 1.959964 * se {
            covered += 1;
        }
        if iv.kp_wald_f.unwrap() > 10.0 {
            strong += 1;
        }
        if rep == 0 {
            eprintln!(
                "ols {} iv {} ± {} kp {} cd {}",
                ols.coefficient("hspill").unwrap(),
                b,
                se,
                iv.kp_wald_f.unwrap(),
                iv.cd_wald_f.unwrap()
            );
        }
    }
    eprintln!("biased {biased} covered {covered} strong {strong} of {reps}");
    assert!(biased as f64 >= 0.9 * reps as f64);
    assert!(covered as f64 >= 0.9 * reps as f64);
    assert!(strong as f64 >= 0.95 * reps as f64);
}
