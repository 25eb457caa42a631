from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="moescale",
    version="0.1.0",
    author="Petter",
    description="Joint scaling law for Mixture-of-Experts models: predict, fit and optimise",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    install_requires=[
        'click>=8.1.7',
        'rich>=13.7.0',
        'python-dotenv>=1.0.0',
        'numpy>=1.22',
        'scipy>=1.8',
        'pandas>=1.4',
    ],
    extras_require={
        'test': ['pytest>=7.0'],
    },
    entry_points={
        'console_scripts': [
            'moescale=moescale.cli:cli',
        ],
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.8",
)
