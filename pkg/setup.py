from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="separable-thermo",
    version="0.1.0",
    description="Free and separability-constrained open quantum dynamics with thermodynamic bookkeeping",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    py_modules=["application"],
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
    install_requires=[
        # Core dependencies
        "numpy==1.26.4",
        "scipy==1.12.0",
        "pandas==2.2.1",

        # Plot scripts
        "matplotlib==3.8.3",
    ],
    extras_require={
        "test": ["pytest>=7.0.0", "pytest-cov>=4.0.0"],
    },
    entry_points={
        "console_scripts": [
            "separable-thermo=application:main",
        ],
    },
)
