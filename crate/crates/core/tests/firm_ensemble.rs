use evomarket::firm::{run_sde_ensemble, AttachmentConfig, AttachmentMode, EnsembleConfig, SdeForm};
use evomarket::stats::{fit_pareto_tail, FitOptions};

fn attachment(rate: f64) -> AttachmentConfig {
    AttachmentConfig {
        rate,
        new_product_size_frac: 0.01,
        noise_amplitude: 1.0,
        mode: AttachmentMode::SdeReduced,
    }
}

fn ensemble(form: SdeForm) -> EnsembleConfig {
    EnsembleConfig {
        n_firms: 5000,
        dt: 0.01,
        initial_size: 1.0,
        floor: 1e-3,
        checkpoint_every: 5.0,
        min_time: 20.0,
        max_time: 200.0,
        ks_tolerance: 0.015,
        patience: 3,
        form,
    }
}

fn tail_exponent(form: SdeForm, rate: f64, seed: u64) -> f64 {
    let out = run_sde_ensemble(&ensemble(form), &attachment(rate), seed).unwrap();
    assert!(out.stationary, "{form:?} at rate {rate} not stationary by t = {}", out.time);
    fit_pareto_tail(&out.sizes, 0.05, &FitOptions::without_gof())
        .unwrap()
        .param("pdf_exponent")
        .unwrap()
}

// The literal Euler-Maruyama form has stationary tail 2 - A/D, the potential
// form 1 + A/D; the two coincide only at A/D = 1/2.
#[test]
fn literal_and_potential_forms_agree_at_half() {
    let literal = tail_exponent(SdeForm::Literal, 0.5, 21);
    let potential = tail_exponent(SdeForm::Potential, 0.5, 21);
    assert!((literal - 1.5).abs() < 0.2, "literal {literal}");
    assert!((potential - 1.5).abs() < 0.2, "potential {potential}");
}

#[test]
fn literal_form_departs_from_potential_form_below_half() {
    let literal = tail_exponent(SdeForm::Literal, 0.25, 22);
    let potential = tail_exponent(SdeForm::Potential, 0.25, 22);
    assert!((literal - 1.75).abs() < 0.2, "literal {literal}");
    assert!((potential - 1.25).abs() < 0.2, "potential {potential}");
}
