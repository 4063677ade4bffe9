"""Whole-body inverse differential kinematics for a mobile manipulator."""
