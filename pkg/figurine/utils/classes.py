from enum import Enum, IntEnum


class BodyPart(IntEnum):
    """The 24 body parts, numbered after the joint that drives them (plus one).

    0 is reserved for background in label images.
    """

    PELVIS = 1
    LEFT_HIP = 2
    RIGHT_HIP = 3
    SPINE1 = 4
    LEFT_KNEE = 5
    RIGHT_KNEE = 6
    SPINE2 = 7
    LEFT_ANKLE = 8
    RIGHT_ANKLE = 9
    SPINE3 = 10
    LEFT_FOOT = 11
    RIGHT_FOOT = 12
    NECK = 13
    LEFT_COLLAR = 14
    RIGHT_COLLAR = 15
    HEAD = 16
    LEFT_SHOULDER = 17
    RIGHT_SHOULDER = 18
    LEFT_ELBOW = 19
    RIGHT_ELBOW = 20
    LEFT_WRIST = 21
    RIGHT_WRIST = 22
    LEFT_HAND = 23
    RIGHT_HAND = 24

    @property
    def label(self) -> str:
        return self.name.lower()


# parts weighted up by the hierarchical loss
EMPHASIZED_PARTS = frozenset(
    {
        BodyPart.HEAD,
        BodyPart.LEFT_HAND,
        BodyPart.RIGHT_HAND,
        BodyPart.LEFT_WRIST,
        BodyPart.RIGHT_WRIST,
        BodyPart.LEFT_ELBOW,
        BodyPart.RIGHT_ELBOW,
        BodyPart.LEFT_SHOULDER,
        BodyPart.RIGHT_SHOULDER,
    }
)


class FramingTier(Enum):
    FULL_BODY = 'full'
    HALF_BODY = 'half'
    FACE = 'face'
