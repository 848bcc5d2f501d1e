// scratch probe of the floquet physics for acceptance tuning
use optomech::closed_form;
use optomech::floquet::{self, FloquetProblem};
use optomech::params::{hz, FeedbackConfig, KerrModulation, SystemParams, Tone, ToneSet};

fn device() -> SystemParams {
    SystemParams {
        omega_c: hz(4.554e9),
        omega_m: hz(707.2e3),
        gamma: hz(9e-3),
        kappa_i: hz(340e3),
        kappa_e: hz(1.16e6),
        n_m_thermal: 588.77104458778431,
        n_c_thermal: 0.42,
        n_add: 2.5,
    }
}

fn weights(p: &FloquetProblem) -> (f64, f64) {
    let grid = p.default_grid();
    let s = p.output_spectrum(&grid).unwrap();
    let w = floquet::sideband_weights(&s, p).unwrap();
    (w.a_plus, w.a_minus)
}

fn main() {
    // criterion 3: sequential drives, gamma raised so gamma_opt << gamma
    let mut resolved = device();
    resolved.kappa_i = hz(707.2);
    resolved.kappa_e = hz(6364.8);
    resolved.n_c_thermal = 0.0;
    resolved.n_add = 0.0;
    resolved.gamma = hz(100.0);
    for n in [0.5, 1.0, 5.0, 100.0] {
        let g_t = hz(2.0);
        let mk = |det: f64| {
            FloquetProblem::new(
                resolved,
                ToneSet::new(Tone::off(), Tone::new(det, g_t)),
                KerrModulation::off(),
                resolved.gamma,
                n,
            )
            .unwrap()
        };
        let (ap_red, _) = weights(&mk(-resolved.omega_m));
        let (_, am_blue) = weights(&mk(resolved.omega_m));
        let ratio = am_blue / ap_red;
        let expect = (n + 1.0) / n;
        let n_rec = ap_red / (am_blue - ap_red);
        println!(
            "n={n}: ratio dev {:+.4}%, inversion dev {:+.4}%",
            100.0 * (ratio / expect - 1.0),
            100.0 * (n_rec / n - 1.0)
        );
    }

    // criterion 4 scaling in G_t at fixed low gain
    let dev = device();
    let phi = closed_form::optimum_phase(&dev);
    for g_t_hz in [800.0, 400.0, 200.0, 150.0, 100.0] {
        let tones = ToneSet::new(Tone::new(0.0, hz(6.32e3)), Tone::new(hz(-48e3), hz(g_t_hz)));
        let fb = FeedbackConfig::new(hz(30.0), phi, 0.0);
        let p0 = FloquetProblem::with_feedback(dev, tones, KerrModulation::off(), &fb).unwrap();
        let pk =
            FloquetProblem::with_feedback(dev, tones, KerrModulation::new(hz(1.2e3), 0.0), &fb)
                .unwrap();
        let (ap0, am0) = weights(&p0);
        let (apk, amk) = weights(&pk);
        let eta0 = (am0 - ap0) / am0;
        let etak = (amk - apk) / amk;
        println!(
            "G_t={g_t_hz}: eta {eta0:+.4} -> {etak:+.4} (shift {:+.4}), energy ratio {:.5}",
            etak - eta0,
            (apk + amk) / (ap0 + am0)
        );
    }
}
