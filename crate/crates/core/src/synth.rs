//! Seeded synthetic datasets.
//!
//! Real dataset files are user-supplied, so CI and the acceptance suite run
//! on generated tables that follow the same schemas. Targets are planted
//! with non-linear structure: each three-way label occupies two opposite
//! angular sectors of a 2-D feature pair, so a linear model cannot separate
//! the classes while a small network can, and the remaining feature columns
//! act as distance noise for nearest-neighbor baselines.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::preprocess::window_partition;
use crate::data::FeatureMatrix;
use crate::model::train::TaskData;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Unit-ring point from one of the two opposite blobs assigned to `class`
/// (three classes, six blob centers 60 degrees apart, isotropic spread
/// `sigma`). Opposite placement keeps every class linearly inseparable.
fn blob_point(
    rng: &mut ChaCha8Rng,
    class: usize,
    opposite: bool,
    rotate_deg: f64,
    sigma: f64,
) -> (f64, f64) {
    let center = class as f64 * 60.0 + if opposite { 180.0 } else { 0.0 };
    let theta = (center + rotate_deg).to_radians();
    (
        theta.cos() + sigma * gauss(rng),
        theta.sin() + sigma * gauss(rng),
    )
}

/// Latent state that persists over consecutive rows, the way shipment
/// conditions persist over consecutive transactions. Each row keeps the
/// previous regime with probability `1 - 1/mean_run`.
struct Regime {
    class: usize,
    blob: bool,
}

impl Regime {
    fn step(&mut self, rng: &mut ChaCha8Rng, n_classes: usize, mean_run: f64) {
        if rng.gen_range(0.0..1.0) < 1.0 / mean_run {
            self.class = rng.gen_range(0..n_classes);
            self.blob = rng.gen_bool(0.5);
        }
    }
}

/// One thousand rows of the smart-logistics layout by default. Labels follow
/// persistent regimes so that consecutive rows, and hence windows, carry
/// correlated structure.
pub fn smart_logistics_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shipment_levels = ["Delayed", "In Transit", "Delivered"];
    let traffic_levels = ["Detour", "Heavy", "Clear"];
    let delay_levels = ["On-Time", "Late"];
    let mut s = String::from(
        "latitude,longitude,inventory_level,shipment_status,temperature,humidity,\
         traffic_status,waiting_time,user_transaction_amount,user_purchase_frequency,\
         truck_id,logistics_delay\n",
    );
    let mut traffic_state = Regime { class: 0, blob: false };
    let mut shipment_state = Regime { class: 1, blob: true };
    let mut truck_state = Regime { class: 3, blob: false };
    let mut prev_shipment = shipment_state.class;
    let mut waiting_window = [30.0f64; 3];
    for t in 0..n {
        traffic_state.step(&mut rng, 3, 6.0);
        let lagged_shipment = prev_shipment;
        shipment_state.step(&mut rng, 3, 6.0);
        prev_shipment = shipment_state.class;
        truck_state.step(&mut rng, 10, 5.0);
        let (traffic, truck) = (traffic_state.class, truck_state.class);

        // traffic class lives in opposite blob pairs of (lat, lon) — a
        // property of the current transaction alone
        let (tx, ty) = blob_point(&mut rng, traffic, traffic_state.blob, 0.0, 0.12);
        let lat = 35.0 + 5.0 * tx;
        let lon = 51.0 + 5.0 * ty;

        // the shipment regime drives (temperature, humidity); the recorded
        // status is the previous transaction's regime, so the label needs
        // sequence context rather than the current row alone
        let (sx, sy) = blob_point(&mut rng, shipment_state.class, shipment_state.blob, 30.0, 0.10);
        let temperature = 25.0 + 10.0 * sx;
        let humidity = 60.0 + 20.0 * sy;

        // waiting time is memoryless; the delay flag reflects the running
        // three-transaction average crossing its median
        let waiting = 30.0 + 10.0 * gauss(&mut rng);
        waiting_window[t % 3] = waiting;
        let seen = (t + 1).min(3);
        let avg: f64 = waiting_window[..seen].iter().sum::<f64>() / seen as f64;
        let delay = usize::from(avg > 30.0);

        // trucks sit on a ten-point ring in (amount, frequency)
        let psi = (truck as f64 * 36.0 + 2.0 * gauss(&mut rng)).to_radians();
        let r3 = 1.0 + 0.10 * gauss(&mut rng);
        let amount = 500.0 + 250.0 * r3 * psi.cos();
        let freq = (12.0 + 6.0 * r3 * psi.sin()).round().max(0.0);

        let inventory = 50.0 + 12.0 * gauss(&mut rng);

        let _ = writeln!(
            s,
            "{lat:.4},{lon:.4},{inventory:.3},{},{temperature:.3},{humidity:.3},{},{waiting:.3},{amount:.3},{freq:.0},Truck_{},{}",
            shipment_levels[lagged_shipment],
            traffic_levels[traffic],
            truck + 1,
            delay_levels[delay],
        );
    }
    s
}

/// Fifty-row fixture of the DataCo layout.
pub fn dataco_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = ["Debit", "Transfer", "Payment", "Cash"];
    let states = [
        "Complete",
        "Processing",
        "PendingPayment",
        "Closed",
        "Pending",
        "On-hold",
        "Suspected-fraud",
        "Canceled",
        "Payment-Review",
    ];
    let modes = ["Standard Class", "First Class", "Second Class", "Same Day"];
    let mut s = String::from(
        "type,real_days_of_shipping,planned_days_of_shipment,gain_for_customer_order,\
         sales_for_consumer,latitude,longitude,discount,discount_rate,total_order,\
         order_profit_rate,order_state,delivery_status,shipping_mode\n",
    );
    for _ in 0..n {
        let planned = rng.gen_range(1..6);
        let mode = rng.gen_range(0..4usize);
        // faster modes plan fewer days; lateness follows the real/planned gap
        let real = (planned as i64 + rng.gen_range(-1..4)).max(0);
        let late = real > planned as i64;
        let _ = writeln!(
            s,
            "{},{real},{planned},{:.2},{:.2},{:.4},{:.4},{:.2},{:.3},{:.2},{:.3},{},{},{}",
            types[rng.gen_range(0..4)],
            30.0 + 120.0 * rng.gen_range(0.0..1.0f64),
            80.0 + 400.0 * rng.gen_range(0.0..1.0f64),
            18.0 + 20.0 * gauss(&mut rng),
            -95.0 + 30.0 * gauss(&mut rng),
            5.0 * rng.gen_range(0.0..1.0f64),
            rng.gen_range(0.0..0.25f64),
            100.0 + 150.0 * rng.gen_range(0.0..1.0f64),
            rng.gen_range(-0.2..0.5f64),
            states[rng.gen_range(0..9)],
            if late { "Late" } else { "On-time" },
            modes[mode],
        );
    }
    s
}

/// Fifty-row fixture of the shipping layout.
pub fn shipping_csv(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let importance = ["low", "medium", "high"];
    let genders = ["F", "M"];
    let warehouses = ["A", "B", "C", "D", "F"];
    let modes = ["Flight", "Ship", "Road"];
    let mut s = String::from(
        "customer_care_calls,customer_rating,cost_of_product,prior_purchases,\
         product_importance,gender,discount_offered,weight_in_grams,\
         warehouse,shipment_mode,reached_on_time\n",
    );
    for _ in 0..n {
        let discount = rng.gen_range(1.0..60.0f64);
        let weight = rng.gen_range(1000.0..7500.0f64);
        // heavier parcels ship by road and run late more often
        let mode = if weight > 5500.0 { 2 } else { rng.gen_range(0..3usize) };
        let late = discount > 30.0 || weight > 6000.0;
        let _ = writeln!(
            s,
            "{},{},{:.2},{},{},{},{discount:.2},{weight:.1},{},{},{}",
            rng.gen_range(2..8),
            rng.gen_range(1..6),
            100.0 + 200.0 * rng.gen_range(0.0..1.0f64),
            rng.gen_range(2..6),
            importance[rng.gen_range(0..3)],
            genders[rng.gen_range(0..2)],
            warehouses[rng.gen_range(0..5)],
            modes[mode],
            if late { "Late" } else { "On-Time" },
        );
    }
    s
}

/// Linearly separable toy task: `classes` Gaussian clusters with orthogonal
/// means over `n_features` dims, windowed and ready for fold training.
pub fn separable_task(
    n_rows: usize,
    n_features: usize,
    n_classes: usize,
    window_size: usize,
    seed: u64,
) -> TaskData {
    assert!(n_features >= n_classes, "need one mean direction per class");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_rows * n_features);
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let class = rng.gen_range(0..n_classes);
        for j in 0..n_features {
            let mean = if j == class { 3.0 } else { 0.0 };
            values.push(mean + 0.6 * gauss(&mut rng));
        }
        labels.push(class);
    }
    let mut labels_per_task = std::collections::BTreeMap::new();
    labels_per_task.insert("toy".to_string(), labels.clone());
    let matrix = FeatureMatrix {
        values,
        n_rows,
        n_cols: n_features,
        column_names: (0..n_features).map(|j| format!("f{j}")).collect(),
        scaler: None,
        labels_per_task,
    };
    let windows = window_partition(n_rows, window_size).expect("valid toy window size");
    TaskData {
        matrix,
        labels,
        windows,
        n_classes,
        n_features,
        classes: (0..n_classes).map(|c| format!("class_{c}")).collect(),
        rows_before_balance: n_rows,
    }
}
