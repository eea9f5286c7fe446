//! Hand-built posecode table covering every channel kind, shared with the
//! golden HMS block files.

use handmotion_core::hms::{Axis as A, Channel, ChannelKey, ChannelKind, PosecodeTable, Target};
use handmotion_core::Side;

fn channel(kind: ChannelKind, hand: Side, target: Option<Target>, processed: Option<Vec<&'static str>>) -> Channel {
    Channel {
        key: ChannelKey { kind, hand, target },
        raw: Vec::new(),
        processed,
    }
}

pub fn crafted_table() -> PosecodeTable {
    use ChannelKind::*;
    use Side::*;
    let torso = || Some(Target::Marker("torso".into()));
    PosecodeTable {
        frames: 0,
        channels: vec![
            channel(Distance, Right, torso(), Some(vec!["close", "medium"])),
            channel(Axis(A::X), Right, torso(), Some(vec!["touching", "close/left"])),
            channel(Axis(A::Y), Right, torso(), Some(vec!["medium/below"])),
            channel(Axis(A::Z), Right, torso(), Some(vec!["close/in front"])),
            channel(Distance, Right, Some(Target::Shoulder(Left)), Some(vec!["spread"])),
            channel(Axis(A::X), Right, Some(Target::Shoulder(Left)), None),
            channel(Distance, Left, Some(Target::Marker("chin".into())), Some(vec!["wide", "spread"])),
            channel(Axis(A::Y), Left, Some(Target::Shoulder(Left)), Some(vec!["close/above"])),
            channel(Distance, Right, Some(Target::Hand(Left)), Some(vec!["spread", "close"])),
            channel(Axis(A::X), Right, Some(Target::Hand(Left)), Some(vec!["medium/right", "touching"])),
            channel(Orientation, Right, None, Some(vec!["down", "in"])),
            channel(Orientation, Left, None, Some(vec!["sideways"])),
        ],
    }
}
