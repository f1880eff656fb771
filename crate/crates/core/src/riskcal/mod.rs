//! Conditional risk estimation: realized-loss regression and the plug-in
//! estimator built on class probabilities.

mod calibrator;
mod loss;
mod temperature;

pub use calibrator::{
    calib_error, calib_error_from, check_disjoint, fit_regression_calibrator, plugin_risk,
    plugin_risk_from_probs, CalibReport, InputMode, InputSource, RiskCalibrator, Strategy,
    CALIBRATOR_FORMAT,
};
pub use loss::{
    class_losses, expected_class_loss, loss_matrix, sample_losses, LossFn, LossKind, MetaLoss,
    DEFAULT_CLAMP_EPS,
};
pub use temperature::{
    fit_temperature, fit_temperature_logits, scaled_probabilities, temperature_nll,
    TemperatureFit, LOG10_T_BRACKET, SEARCH_TOL,
};
