from riskverify.config import THREADS, FIXTURES_DIR
from riskverify.polyalg import Polynomial, PolyTrajectory, VarId, parse_polynomial
from riskverify.uncertainty import Beta, Gaussian, MomentList, UncertaintyModel, Uniform
from riskverify.contour import RiskContour, SafetyConstraint, build_contour, risk_bound
from riskverify.soscert import SosProblem, certify
from riskverify.verifier import Scenario, Tube, Verdict, VerifyOptions, verify_pointwise, verify_trajectory, verify_tube
from riskverify.mcoracle import estimate_risk, estimate_trajectory_risk
from riskverify.scenario import ScenarioFile, load_scenario

__all__ = [
    "THREADS",
    "FIXTURES_DIR",
    "Polynomial",
    "PolyTrajectory",
    "VarId",
    "parse_polynomial",
    "Beta",
    "Gaussian",
    "MomentList",
    "UncertaintyModel",
    "Uniform",
    "RiskContour",
    "SafetyConstraint",
    "build_contour",
    "risk_bound",
    "SosProblem",
    "certify",
    "Scenario",
    "Tube",
    "Verdict",
    "VerifyOptions",
    "verify_pointwise",
    "verify_trajectory",
    "verify_tube",
    "estimate_risk",
    "estimate_trajectory_risk",
    "ScenarioFile",
    "load_scenario",
]
