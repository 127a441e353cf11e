from .traffic_simulator import (
    AttackKind, AttackSpec, SimConfig, TrafficSimulator, generate,
    random_attack_schedule, read_truth, write_truth,
)

__all__ = [
    'AttackKind', 'AttackSpec', 'SimConfig', 'TrafficSimulator', 'generate',
    'random_attack_schedule', 'read_truth', 'write_truth',
]
