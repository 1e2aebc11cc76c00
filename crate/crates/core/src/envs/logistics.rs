//! Single-truck stock distribution from a depot to a handful of stores.
//!
//! The observation is the concatenated binary encoding of
//! `(depot stock, store stocks..., truck location, truck load)`, most
//! significant field first. With the default constants that is
//! 4 + 2 + 3 + 2 + 3 + 3 + 1 = 18 bits.
//!
//! Actions: 0 orders one unit to the depot, 1 loads one unit onto the truck
//! from its current location, 2 unloads one unit there, and `3 + l` drives
//! to location `l` (0 is the depot). After the action every store holding
//! stock sells up to `sales_rate` units, then rent is charged on what is
//! left in storage.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::error::{Error, Result};
use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticsSpec {
    /// Storage capacity per location, depot first.
    pub capacities: Vec<u32>,
    pub truck_capacity: u32,
    /// Range of the per-instance cost of driving between two locations.
    pub transport_cost: [f64; 2],
    pub order_cost: f64,
    pub sale_revenue: f64,
    pub sales_rate: u32,
    /// Range of the per-unit rent at each location, depot first.
    pub rent: Vec<[f64; 2]>,
}

impl Default for LogisticsSpec {
    fn default() -> Self {
        LogisticsSpec {
            capacities: vec![12, 3, 4, 3, 6],
            truck_capacity: 1,
            transport_cost: [-1.2, -0.6],
            order_cost: -2.0,
            sale_revenue: 7.0,
            sales_rate: 1,
            rent: vec![
                [-0.2, -0.05],
                [-0.05, -0.01],
                [-0.08, -0.03],
                [-0.08, -0.01],
                [-0.4, -0.001],
            ],
        }
    }
}

fn bits_for(max: u32) -> u32 {
    u32::BITS - max.leading_zeros()
}

impl LogisticsSpec {
    pub fn validate(&self) -> Result<()> {
        if self.capacities.len() < 2 {
            return Err(Error::invalid("need a depot and at least one store"));
        }
        if self.rent.len() != self.capacities.len() {
            return Err(Error::invalid("one rent range per location is required"));
        }
        let ranges = self.rent.iter().chain(std::iter::once(&self.transport_cost));
        if ranges.clone().any(|r| !(r[0] <= r[1])) {
            return Err(Error::invalid("cost ranges must satisfy lo <= hi"));
        }
        if self.truck_capacity == 0 {
            return Err(Error::invalid("truck capacity must be positive"));
        }
        if self.encoding_bits() > 30 {
            return Err(Error::Capacity(format!(
                "{}-bit observation is too large",
                self.encoding_bits()
            )));
        }
        Ok(())
    }

    fn field_widths(&self) -> Vec<u32> {
        let mut w: Vec<u32> = self.capacities.iter().map(|&c| bits_for(c)).collect();
        w.push(bits_for(self.capacities.len() as u32 - 1));
        w.push(bits_for(self.truck_capacity));
        w
    }

    pub fn encoding_bits(&self) -> u32 {
        self.field_widths().iter().sum()
    }

    /// Number of well-formed configurations: stock within capacity and
    /// load within the truck capacity. With sales after every action the
    /// agent only ever occupies a small subset of these.
    pub fn valid_configurations(&self) -> u64 {
        let stock: u64 = self.capacities.iter().map(|&c| c as u64 + 1).product();
        stock * self.capacities.len() as u64 * (self.truck_capacity as u64 + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LogisticsState {
    /// Stock per location, depot first.
    pub stock: Vec<u32>,
    pub location: u32,
    pub load: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Logistics {
    spec: LogisticsSpec,
    widths: Vec<u32>,
    transport: f64,
    rent: Vec<f64>,
}

impl Logistics {
    /// Draw the transport and rent costs for one instance.
    pub fn sample(spec: &LogisticsSpec, rng: &mut SimRng) -> Result<Self> {
        spec.validate()?;
        let mut draw = |r: [f64; 2]| {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.random_range(r[0]..r[1])
            }
        };
        let transport = draw(spec.transport_cost);
        let rent = spec.rent.iter().map(|&r| draw(r)).collect();
        Ok(Logistics {
            widths: spec.field_widths(),
            spec: spec.clone(),
            transport,
            rent,
        })
    }

    pub fn transport_cost(&self) -> f64 {
        self.transport
    }

    pub fn rent(&self) -> &[f64] {
        &self.rent
    }

    pub fn locations(&self) -> usize {
        self.spec.capacities.len()
    }

    pub fn encode(&self, state: &LogisticsState) -> usize {
        let fields = state
            .stock
            .iter()
            .copied()
            .chain([state.location, state.load]);
        let mut code = 0usize;
        for (value, &width) in fields.zip(&self.widths) {
            code = (code << width) | value as usize;
        }
        code
    }

    /// Inverse of [`encode`](Self::encode). Fields outside their range
    /// (unreachable codes) are clamped.
    pub fn decode(&self, code: usize) -> LogisticsState {
        let n = self.locations();
        let mut values = vec![0u32; n + 2];
        let mut rest = code;
        for (slot, &width) in values.iter_mut().zip(&self.widths).rev() {
            *slot = (rest & ((1 << width) - 1)) as u32;
            rest >>= width;
        }
        let load = values.pop().expect("load field").min(self.spec.truck_capacity);
        let location = values.pop().expect("location field").min(n as u32 - 1);
        for (v, &cap) in values.iter_mut().zip(&self.spec.capacities) {
            *v = (*v).min(cap);
        }
        LogisticsState {
            stock: values,
            location,
            load,
        }
    }

    /// Apply one action to a decoded state and return the reward.
    pub fn apply(&self, st: &mut LogisticsState, action: usize) -> f64 {
        let caps = &self.spec.capacities;
        let here = st.location as usize;
        let mut reward = 0.0;
        match action {
            0 => {
                if st.stock[0] < caps[0] {
                    st.stock[0] += 1;
                    reward += self.spec.order_cost;
                }
            }
            1 => {
                if st.stock[here] > 0 && st.load < self.spec.truck_capacity {
                    st.stock[here] -= 1;
                    st.load += 1;
                }
            }
            2 => {
                if st.load > 0 && st.stock[here] < caps[here] {
                    st.stock[here] += 1;
                    st.load -= 1;
                }
            }
            _ => {
                let to = (action - 3) as u32;
                if to != st.location {
                    st.location = to;
                    reward += self.transport;
                }
            }
        }
        for stock in st.stock.iter_mut().skip(1) {
            let sold = (*stock).min(self.spec.sales_rate);
            *stock -= sold;
            reward += sold as f64 * self.spec.sale_revenue;
        }
        for (stock, rent) in st.stock.iter().zip(&self.rent) {
            reward += *stock as f64 * rent;
        }
        reward
    }
}

impl Environment for Logistics {
    fn num_states(&self) -> usize {
        1 << self.spec.encoding_bits()
    }

    fn num_actions(&self) -> usize {
        3 + self.locations()
    }

    fn initial_state(&self) -> usize {
        0
    }

    fn step(&self, state: usize, action: usize, _rng: &mut SimRng) -> (usize, f64) {
        let mut st = self.decode(state);
        let reward = self.apply(&mut st, action);
        (self.encode(&st), reward)
    }
}
