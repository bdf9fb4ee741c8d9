// args:
int A[5] = {5, 2, 4, 1, 3};
void sort(void) {
    for (int i = 0; i < 5; i++)
        for (int j = 0; j + 1 < 5 - i; j++)
            if (A[j] > A[j + 1]) {
                int t = A[j];
                A[j] = A[j + 1];
                A[j + 1] = t;
            }
}
int main(void) {
    sort();
    return A[0] * 1000 + A[1] * 100 + A[2] * 10 + A[4];
}
