use crate::error::{Error, Result};
use crate::rng::Xoshiro256StarStar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Delivery {
    Delivered(Vec<u8>),
    Dropped,
}

impl Delivery {
    pub fn is_delivered(&self) -> bool {
        matches!(self, Delivery::Delivered(_))
    }
}

/// Lossy in-process link. Each transmission draws one `u = next_f64()`
/// from a xoshiro256** stream and is delivered intact iff
/// `u >= loss_rate`.
#[derive(Clone, Debug)]
pub struct SimulatedChannel {
    loss_rate: f64,
    rng: Xoshiro256StarStar,
    pub sent: u64,
    pub delivered: u64,
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
}

impl SimulatedChannel {
    pub fn new(loss_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&loss_rate) {
            return Err(Error::Config(format!("loss rate must be in [0, 1], got {loss_rate}")));
        }
        Ok(Self {
            loss_rate,
            rng: Xoshiro256StarStar::seed_from_u64(seed),
            sent: 0,
            delivered: 0,
            bytes_sent: 0,
            bytes_delivered: 0,
        })
    }

    pub fn transmit(&mut self, packet: &[u8]) -> Delivery {
        self.sent += 1;
        self.bytes_sent += packet.len() as u64;
        if self.rng.next_f64() >= self.loss_rate {
            self.delivered += 1;
            self.bytes_delivered += packet.len() as u64;
            Delivery::Delivered(packet.to_vec())
        } else {
            Delivery::Dropped
        }
    }
}

/// One transmission over a fresh channel.
pub fn simulate_channel(packet: &[u8], loss_rate: f64, seed: u64) -> Result<Delivery> {
    Ok(SimulatedChannel::new(loss_rate, seed)?.transmit(packet))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extremes() {
        let mut always = SimulatedChannel::new(0.0, 3).unwrap();
        let mut never = SimulatedChannel::new(1.0, 3).unwrap();
        for i in 0..200u8 {
            assert_eq!(always.transmit(&[i, 1]), Delivery::Delivered(vec![i, 1]));
            assert_eq!(never.transmit(&[i]), Delivery::Dropped);
        }
        assert_eq!(always.bytes_delivered, 400);
        assert!(SimulatedChannel::new(1.5, 0).is_err());
    }
}
