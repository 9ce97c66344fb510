use std::fmt;

/// Receiver priority class. 0 is the destination itself; 1..=3 contend in
/// decreasing priority; 4 moves the request away and never contends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeClass(u8);

impl NodeClass {
    pub const DESTINATION: NodeClass = NodeClass(0);
    pub const AWAY: NodeClass = NodeClass(4);

    pub fn new(c: u8) -> Option<NodeClass> {
        (c <= 4).then_some(NodeClass(c))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn contends(self) -> bool {
        self.0 <= 3
    }
}

impl fmt::Display for NodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Classifies a receiver by the progress `Δd = l − receiver_to_dest` it
/// offers, with class width `d`:
///
/// * class 1: `Δd > 2d`
/// * class 2: `d ≤ Δd ≤ 2d`
/// * class 3: `0 ≤ Δd < d`
/// * class 4: `Δd < 0`
pub fn classify_with_width(
    sender_to_dest: f64,
    receiver_to_dest: f64,
    class_width: f64,
    is_destination: bool,
) -> NodeClass {
    if is_destination {
        return NodeClass::DESTINATION;
    }
    let progress = sender_to_dest - receiver_to_dest;
    let d = class_width;
    if progress > 2.0 * d {
        NodeClass(1)
    } else if progress >= d {
        NodeClass(2)
    } else if progress >= 0.0 {
        NodeClass(3)
    } else {
        NodeClass::AWAY
    }
}

/// [`classify_with_width`] with the default width `r / 3`.
pub fn classify_receiver(
    sender_to_dest: f64,
    receiver_to_dest: f64,
    radio_range: f64,
    is_destination: bool,
) -> NodeClass {
    classify_with_width(
        sender_to_dest,
        receiver_to_dest,
        radio_range / 3.0,
        is_destination,
    )
}
