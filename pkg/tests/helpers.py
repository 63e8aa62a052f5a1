import math

from votedetect.votespace import Vote, VoteSpace


def make_vote(vote_id=0, cx=0.0, cy=0.0, rel_scale=1.0, rel_rotation=0.0, adjacency=1.0,
              pattern_feature_id=0, scene_feature_id=None, scene_lum=0, pattern_lum=0):
    return Vote(vote_id=vote_id, cx=cx, cy=cy, rel_scale=rel_scale,
                rel_rotation=rel_rotation % (2 * math.pi), adjacency=adjacency,
                pattern_feature_id=pattern_feature_id,
                scene_feature_id=vote_id if scene_feature_id is None else scene_feature_id,
                scene_lum=scene_lum, pattern_lum=pattern_lum)


def random_vote_space(rng, n, dims=(400, 300), n_pattern=None, spread=0.0):
    """Votes at uniform positions; ``spread`` lets centers fall outside the scene."""
    w, h = dims
    n_pattern = n_pattern or max(1, n)
    votes = [
        make_vote(i,
                  cx=float(rng.uniform(-spread * w, (1 + spread) * w)),
                  cy=float(rng.uniform(-spread * h, (1 + spread) * h)),
                  rel_scale=float(rng.uniform(0.5, 2.0)),
                  rel_rotation=float(rng.uniform(0, 2 * math.pi)),
                  adjacency=float(rng.uniform(0, 1)),
                  pattern_feature_id=int(rng.integers(0, n_pattern)),
                  scene_feature_id=i)
        for i in range(n)
    ]
    return VoteSpace("P", votes, dims)
